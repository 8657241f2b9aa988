#include <gtest/gtest.h>

#include "odc/accounting.hpp"
#include "odc/random.hpp"

using namespace odc;

namespace {

ModelGraph single_conv(Variant v, std::size_t cin, std::size_t cout, std::size_t k,
                       std::size_t stride, std::size_t hw) {
  ModelGraph g;
  g.model = "single";
  g.variant = v;
  g.input = {cin, hw, hw};
  LayerDescriptor l;
  l.kind = v == Variant::onedconv ? LayerKind::onedconv : LayerKind::conv;
  l.name = "conv";
  l.conv = ConvSpec{cin, cout, k, stride, {}, true};
  g.layers.push_back(l);
  resolve(g);
  return g;
}

// ResNet18 parameters recounted from the block structure alone.
std::uint64_t resnet18_params_by_hand(std::uint64_t classes, bool onedconv) {
  auto conv = [&](std::uint64_t cin, std::uint64_t cout, std::uint64_t k) {
    std::uint64_t p = cin * cout * k * k;
    if (onedconv && k == 3) p += (k - 1) * (k * k * cin + 1);
    return p;
  };
  std::uint64_t total = conv(3, 64, 3) + 2 * 64;
  std::uint64_t cin = 64;
  for (std::uint64_t width : {64, 128, 256, 512}) {
    for (int block = 0; block < 2; ++block) {
      total += conv(cin, width, 3) + conv(width, width, 3) + 4 * width;
      if (cin != width) total += conv(cin, width, 1) + 2 * width;
      cin = width;
    }
  }
  return total + 512 * classes + classes;
}

}  // namespace

TEST(Accounting, ResNet18Parameters) {
  const auto van = build_resnet18(Variant::vanilla);
  const auto odc = build_resnet18(Variant::onedconv);
  EXPECT_EQ(count_params(van), 11173962u);
  EXPECT_EQ(count_params(van), resnet18_params_by_hand(10, false));
  EXPECT_EQ(count_params(odc), resnet18_params_by_hand(10, true));
  EXPECT_EQ(count_params(odc) - count_params(van), 61144u);
  // Running mean and variance: 2 per batchnorm channel.
  EXPECT_EQ(count_buffers(van), 9600u);
}

TEST(Accounting, OnlyThreeByThreeConvsAreReplaced) {
  const auto g = build_resnet18(Variant::onedconv);
  std::size_t dynamic = 0, vanilla = 0;
  for (const auto& l : g.layers) {
    if (l.kind == LayerKind::onedconv) {
      ++dynamic;
      EXPECT_EQ(l.conv.kernel, 3u);
    }
    if (l.kind == LayerKind::conv) {
      ++vanilla;
      EXPECT_EQ(l.conv.kernel, 1u);
    }
  }
  EXPECT_EQ(dynamic, 17u);
  EXPECT_EQ(vanilla, 3u);
}

TEST(Accounting, TinyCnnParameters) {
  // conv 1->16 (160), bn (32), conv 16->32 (4640), bn (64), fc 2048->10 (20490)
  EXPECT_EQ(count_params(build_tiny_cnn(Variant::vanilla)), 25386u);
  // plus 2 (9 + 1) and 2 (144 + 1)
  EXPECT_EQ(count_params(build_tiny_cnn(Variant::onedconv)), 25386u + 20u + 290u);
}

TEST(Accounting, ShapeConvParams) {
  EXPECT_EQ(shape_conv_params(ConvSpec{3, 64, 3, 1, {}, false}), 56u);
  EXPECT_EQ(shape_conv_params(ConvSpec{4, 8, 5, 1, {}, false}), 4u * 101u);
}

TEST(Accounting, ClosedFormFlops) {
  const auto g = single_conv(Variant::onedconv, 3, 64, 3, 1, 32);
  const FlopCount f = count_flops(g.layers[0]);
  EXPECT_EQ(f.main, 2ull * 32 * 32 * 64 * 28);
  EXPECT_EQ(f.main, 3670016u);
  EXPECT_EQ(f.overhead, 114688u);
  EXPECT_EQ(count_flops(single_conv(Variant::vanilla, 3, 64, 3, 1, 32).layers[0]).overhead, 0u);
}

TEST(Accounting, OverheadRatioPerLayer) {
  for (const auto& l : build_resnet18(Variant::onedconv).layers) {
    if (!l.is_conv()) continue;
    const FlopCount f = count_flops(l);
    if (l.kind == LayerKind::onedconv) {
      EXPECT_EQ(f.overhead * l.conv.out_channels, f.main * (l.conv.kernel - 1)) << l.name;
    } else {
      EXPECT_EQ(f.overhead, 0u) << l.name;
    }
  }
}

TEST(Accounting, MeasuredMatchesClosedForm) {
  Rng rng(4);
  for (std::size_t stride : {1u, 2u}) {
    const auto g = single_conv(Variant::vanilla, 2, 3, 3, stride, 6);
    const Tensor x = random_tensor({1, 2, 6, 6}, rng);
    const MeasuredFlops m = measured_flops(g.layers[0], x);
    EXPECT_EQ(m.main, count_flops(g.layers[0]).main);
    EXPECT_EQ(m.overhead, 0u);
    EXPECT_EQ(m.sampling, 0u);
  }
  const auto d = single_conv(Variant::onedconv, 2, 3, 3, 1, 6);
  const MeasuredFlops m = measured_flops(d.layers[0], random_tensor({1, 2, 6, 6}, rng));
  EXPECT_EQ(m.main, count_flops(d.layers[0]).main);
  EXPECT_GE(m.overhead, count_flops(d.layers[0]).overhead);
  EXPECT_GT(m.sampling, 0u);
}

TEST(Accounting, SerializeRoundTrip) {
  for (auto v : {Variant::vanilla, Variant::onedconv}) {
    const auto g = build_resnet18(v);
    const std::string text = serialize(g);
    const auto back = parse_graph(text);
    EXPECT_EQ(serialize(back), text);
    EXPECT_EQ(count_params(back), count_params(g));
  }
}

TEST(Accounting, UnresolvedGraphIsRejected) {
  ModelGraph g;
  g.input = {1, 8, 8};
  LayerDescriptor l;
  l.kind = LayerKind::conv;
  l.name = "c";
  l.conv = ConvSpec{1, 2, 3, 1, {}, false};
  g.layers.push_back(l);
  EXPECT_THROW(count_params(g), UnresolvedGraphError);
}

TEST(Accounting, MismatchedResidualIsRejected) {
  ModelGraph g;
  g.input = {4, 8, 8};
  LayerDescriptor b;
  b.kind = LayerKind::residual_begin;
  b.name = "b";
  LayerDescriptor c;
  c.kind = LayerKind::conv;
  c.name = "c";
  c.conv = ConvSpec{4, 8, 3, 1, {}, false};
  LayerDescriptor e;
  e.kind = LayerKind::residual_end;
  e.name = "e";
  g.layers = {b, c, e};
  EXPECT_THROW(resolve(g), ShapeError);
}

TEST(Accounting, ParseErrors) {
  EXPECT_THROW(parse_variant("deformable"), std::invalid_argument);
  EXPECT_THROW(parse_layer_kind("lstm"), std::invalid_argument);
  EXPECT_THROW(build_model("vgg", Variant::vanilla, 10, 1), std::invalid_argument);
}
