#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "odc/onedconv.hpp"
#include "odc/random.hpp"
#include "oracles.hpp"

using namespace odc;

TEST(OneDConv, ShapeConvSpec) {
  ConvSpec main{4, 8, 5, 2, {}, false};
  ConvSpec s = shape_conv_spec(main);
  EXPECT_EQ(s.in_channels, 4u);
  EXPECT_EQ(s.out_channels, 4u);
  EXPECT_EQ(s.kernel, 5u);
  EXPECT_EQ(s.stride, 2u);
  EXPECT_EQ(s.pad(), 2u);
  EXPECT_TRUE(s.has_bias);
  auto w = ShapeConvWeights::zeros(main);
  EXPECT_EQ(w.kernel.shape(), (Shape{4, 4, 5, 5}));
  EXPECT_EQ(w.bias.size(), 4u);
}

TEST(OneDConv, SquareOffsets) {
  EXPECT_EQ(center_filter(3), 1u);
  EXPECT_EQ(center_filter(5), 2u);
  EXPECT_EQ(square_offset(0, 3, 7), -7.0);
  EXPECT_EQ(square_offset(1, 3, 7), 0.0);
  EXPECT_EQ(square_offset(4, 5, 9), 18.0);
}

TEST(OneDConv, OffsetsFromShapeHandValues) {
  // K = 5, w_pad = 10, deltas s = (1, 2, 3, 4): gaps 11, 12, 13, 14.
  Tensor s({1, 4, 1, 1}, {1, 2, 3, 4});
  Tensor d = offsets_from_shape(s, 10);
  ASSERT_EQ(d.shape(), (Shape{1, 5, 1, 1}));
  EXPECT_EQ(d.values(), (std::vector<double>{-23, -12, 0, 13, 27}));
  Tensor z = offsets_from_shape(Tensor({1, 4, 1, 1}), 10);
  EXPECT_EQ(z.values(), (std::vector<double>{-20, -10, 0, 10, 20}));
}

TEST(OneDConv, OffsetsBackwardIsAdjoint) {
  // offsets are affine in s, so <d(s) - d(0), g> = <s, offsets_backward(g)>.
  Rng rng(21);
  for (std::size_t k : {3u, 5u}) {
    Tensor s = random_tensor({2, k - 1, 3, 2}, rng);
    Tensor g = random_tensor({2, k, 3, 2}, rng);
    Tensor lin = add(offsets_from_shape(s, 6), scale(offsets_from_shape(Tensor(s.shape()), 6), -1));
    EXPECT_NEAR(sum(mul(lin, g)), sum(mul(s, offsets_backward(g))), 1e-12);
  }
}

TEST(OneDConv, LinearSample) {
  Tensor t({1, 1, 1, 4}, {2, 4, 8, 16});
  FlatView v(t, 0, 0);
  EXPECT_EQ(linear_sample(v, 0.0), 2.0);
  EXPECT_EQ(linear_sample(v, 3.0), 16.0);
  EXPECT_DOUBLE_EQ(linear_sample(v, 1.25), 0.75 * 4 + 0.25 * 8);
  EXPECT_DOUBLE_EQ(linear_sample(v, -0.5), 1.0);   // half of x[0]
  EXPECT_DOUBLE_EQ(linear_sample(v, 3.5), 8.0);    // half of x[3]
  EXPECT_EQ(linear_sample(v, -1.0), 0.0);
  EXPECT_EQ(linear_sample(v, 4.0), 0.0);
  EXPECT_EQ(linear_sample(v, std::numeric_limits<double>::quiet_NaN()), 0.0);
  EXPECT_EQ(linear_sample(v, std::numeric_limits<double>::infinity()), 0.0);
}

TEST(OneDConv, ZeroShapeEqualsConv2d) {
  Rng rng(8);
  for (std::size_t k : {3u, 5u}) {
    for (std::size_t stride : {1u, 2u}) {
      ConvSpec spec{2, 3, k, stride, {}, true};
      Tensor x = random_tensor({2, 2, 7, 8}, rng);
      ConvWeights w{random_tensor({3, 2, k, k}, rng), random_tensor(vector_shape(3), rng)};
      auto r = onedconv_forward(x, spec, w, ShapeConvWeights::zeros(spec));
      Tensor ref = conv2d_forward(x, spec, w);
      ASSERT_EQ(r.y.shape(), ref.shape());
      EXPECT_EQ(max_abs_diff(r.y, ref), 0.0) << "k=" << k << " stride=" << stride;
    }
  }
}

TEST(OneDConv, MatchesTermByTermOracle) {
  Rng rng(13);
  for (std::size_t k : {3u, 5u}) {
    for (std::size_t stride : {1u, 2u}) {
      ConvSpec spec{2, 2, k, stride, {}, true};
      Tensor x = random_tensor({1, 2, 6, 7}, rng);
      ConvWeights w{random_tensor({2, 2, k, k}, rng), random_tensor(vector_shape(2), rng)};
      ShapeConvWeights sw = ShapeConvWeights::zeros(spec);
      for (double& v : sw.kernel.data()) v = rng.uniform(-0.5, 0.5);
      for (double& v : sw.bias.data()) v = rng.uniform(-2.0, 2.0);
      auto r = onedconv_forward(x, spec, w, sw);
      Tensor ref = oracle::onedconv(x, spec, w, oracle::conv(x, shape_conv_spec(spec), sw));
      EXPECT_LT(max_abs_diff(r.y, ref), 1e-12) << "k=" << k << " stride=" << stride;
    }
  }
}

TEST(OneDConv, IntegerShiftMovesFilterRows) {
  // A gap one pixel longer moves the outer rows one flattened step outward.
  ConvSpec spec{1, 1, 3, 1, {}, false};
  Tensor x({1, 1, 4, 4});
  for (std::size_t k = 0; k < 16; ++k) x[k] = static_cast<double>(k + 1);
  ConvWeights w = ConvWeights::zeros(spec);
  w.kernel.at(0, 0, 2, 1) = 1.0;  // bottom row, middle tap
  ShapeConvWeights sw = ShapeConvWeights::zeros(spec);
  sw.bias[1] = 1.0;
  auto r = onedconv_forward(x, spec, w, sw);
  // Output (1,1) reads padded (3,2)+1 = padded (3,3) = x(2,2).
  EXPECT_EQ(r.y.at(0, 0, 1, 1), x.at(0, 0, 2, 2));
}

TEST(OneDConv, ApplyEqualsForwardWithItsOffsets) {
  Rng rng(2);
  ConvSpec spec{1, 2, 3, 2, {}, true};
  Tensor x = random_tensor({2, 1, 6, 6}, rng);
  ConvWeights w{random_tensor({2, 1, 3, 3}, rng), random_tensor(vector_shape(2), rng)};
  ShapeConvWeights sw = ShapeConvWeights::zeros(spec);
  for (double& v : sw.bias.data()) v = 0.4;
  auto r = onedconv_forward(x, spec, w, sw);
  EXPECT_EQ(max_abs_diff(onedconv_apply(x, spec, w, r.cache.offsets), r.y), 0.0);
}

TEST(OneDConv, RejectsMismatchedInputs) {
  ConvSpec spec{2, 1, 3, 1, {}, false};
  Tensor x({1, 1, 5, 5});
  EXPECT_THROW(onedconv_forward(x, spec, ConvWeights::zeros(spec), ShapeConvWeights::zeros(spec)),
               ShapeError);
  ConvSpec ok{1, 1, 3, 1, {}, false};
  EXPECT_THROW(onedconv_apply(x, ok, ConvWeights::zeros(ok), Tensor({1, 2, 5, 5})), ShapeError);
}
