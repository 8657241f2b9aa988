#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "odc/network.hpp"
#include "odc/random.hpp"
#include "odc/train.hpp"

using namespace odc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  fs::path p = fs::temp_directory_path() / ("odc_net_" + std::string(info->name()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<char> bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Balanced labels; each class lights a different horizontal band.
LabeledDataset synthetic(std::size_t n, std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  LabeledDataset ds;
  ds.images = Tensor({n, 1, side, side});
  for (std::size_t k = 0; k < n; ++k) {
    const int label = static_cast<int>(k % 10);
    ds.labels.push_back(label);
    for (std::size_t h = 0; h < side; ++h)
      for (std::size_t w = 0; w < side; ++w) {
        const bool band = h * 10 / side == static_cast<std::size_t>(label);
        ds.images.at(k, 0, h, w) = (band ? 0.8 : 0.0) + rng.uniform(0.0, 0.2);
      }
  }
  return ds;
}

double loss_of(Network& net, const Tensor& x, const std::vector<int>& labels) {
  return softmax_cross_entropy(net.forward(x, true), labels).loss;
}

// Compares backward() against central differences on a few coordinates of
// every parameter tensor.
void check_network_gradients(Network& net, const Tensor& x, const std::vector<int>& labels) {
  auto r = softmax_cross_entropy(net.forward(x, true), labels);
  net.backward(r.grad_logits);
  std::vector<Tensor> analytic;
  for (auto& p : net.parameters()) analytic.push_back(*p.grad);
  auto params = net.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& v = *params[k].value;
    for (std::size_t i : {std::size_t{0}, v.size() / 2, v.size() - 1}) {
      const double saved = v[i];
      const double eps = 1e-5;
      v[i] = saved + eps;
      const double up = loss_of(net, x, labels);
      v[i] = saved - eps;
      const double down = loss_of(net, x, labels);
      v[i] = saved;
      const double num = (up - down) / (2 * eps);
      const double ana = analytic[k][i];
      EXPECT_LT(std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6}), 1e-4)
          << params[k].name << "[" << i << "] analytic " << ana << " numeric " << num;
    }
  }
}

void shift_shape_bias(Network& net, double value) {
  for (auto& p : net.parameters())
    if (p.name.ends_with(".shape.bias")) p.value->fill(value);
}

TEST(Network, ZeroShapeStartMatchesVanilla) {
  Network van(build_tiny_cnn(Variant::vanilla), 5);
  Network dyn(build_tiny_cnn(Variant::onedconv), 5);
  const auto ds = synthetic(8, 32, 1);
  EXPECT_EQ(van.forward(ds.images, true).values(), dyn.forward(ds.images, true).values());
  EXPECT_EQ(van.forward(ds.images, false).values(), dyn.forward(ds.images, false).values());
}

TEST(Network, SeedControlsInitialization) {
  Network a(build_tiny_cnn(Variant::vanilla), 1), b(build_tiny_cnn(Variant::vanilla), 1),
      c(build_tiny_cnn(Variant::vanilla), 2);
  EXPECT_EQ(a.parameters()[0].value->values(), b.parameters()[0].value->values());
  EXPECT_NE(a.parameters()[0].value->values(), c.parameters()[0].value->values());
}

TEST(Network, TinyCnnGradients) {
  const auto ds = synthetic(4, 8, 2);
  for (auto v : {Variant::vanilla, Variant::onedconv}) {
    Network net(build_tiny_cnn(v, 10, 1, 8), 3);
    shift_shape_bias(net, 0.3);
    check_network_gradients(net, ds.images, ds.labels);
  }
}

// Two residual blocks, one joining the identity and one a projection
// shortcut, small enough for finite differences.
ModelGraph small_residual(Variant v) {
  ModelGraph g;
  g.model = "small-residual";
  g.variant = v;
  g.input = {1, 8, 8};
  auto conv = [&](const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                  std::size_t stride) {
    LayerDescriptor l;
    l.kind = v == Variant::onedconv && k == 3 ? LayerKind::onedconv : LayerKind::conv;
    l.name = name;
    l.conv = ConvSpec{cin, cout, k, stride, {}, false};
    return l;
  };
  auto simple = [](LayerKind k, const std::string& name) {
    LayerDescriptor l;
    l.kind = k;
    l.name = name;
    return l;
  };
  auto& L = g.layers;
  L.push_back(conv("stem", 1, 3, 3, 1));
  L.push_back(simple(LayerKind::batchnorm, "stem_bn"));
  L.push_back(simple(LayerKind::relu, "stem_relu"));
  L.push_back(simple(LayerKind::residual_begin, "a.begin"));
  L.push_back(conv("a.conv", 3, 3, 3, 1));
  L.push_back(simple(LayerKind::batchnorm, "a.bn"));
  L.push_back(simple(LayerKind::residual_end, "a.add"));
  L.push_back(simple(LayerKind::relu, "a.relu"));
  L.push_back(simple(LayerKind::residual_begin, "b.begin"));
  L.push_back(conv("b.conv", 3, 4, 3, 2));
  L.push_back(simple(LayerKind::batchnorm, "b.bn"));
  L.push_back(simple(LayerKind::shortcut, "b.shortcut"));
  L.push_back(conv("b.down", 3, 4, 1, 2));
  L.push_back(simple(LayerKind::batchnorm, "b.down_bn"));
  L.push_back(simple(LayerKind::residual_end, "b.add"));
  L.push_back(simple(LayerKind::global_avgpool, "pool"));
  LayerDescriptor fc = simple(LayerKind::fc, "fc");
  fc.features = 10;
  L.push_back(fc);
  resolve(g);
  return g;
}

TEST(Network, ResidualGradients) {
  const auto ds = synthetic(4, 8, 3);
  for (auto v : {Variant::vanilla, Variant::onedconv}) {
    Network net(small_residual(v), 4);
    shift_shape_bias(net, 0.3);
    check_network_gradients(net, ds.images, ds.labels);
  }
}

TEST(Network, ResNet18Forward) {
  Network net(build_resnet18(Variant::onedconv, 10, 1, 32), 1);
  const auto ds = synthetic(2, 32, 3);
  const Tensor logits = net.forward(ds.images, true);
  EXPECT_EQ(logits.shape(), (Shape{2, 10, 1, 1}));
  for (double v : logits.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(net.dynamic_layers(), 17u);
  EXPECT_EQ(net.offset_deviation().size(), 17u);
}

TEST(Network, RejectsWrongInput) {
  Network net(build_tiny_cnn(Variant::vanilla), 1);
  EXPECT_THROW(net.forward(Tensor({1, 3, 32, 32}), false), ShapeError);
}

TEST(Network, ParameterNames) {
  Network net(build_tiny_cnn(Variant::onedconv), 1);
  std::vector<std::string> names;
  for (const auto& p : net.parameters()) names.push_back(p.name);
  const std::vector<std::string> want{
      "conv1.weight", "conv1.bias", "conv1.shape.weight", "conv1.shape.bias",
      "bn1.gamma",    "bn1.beta",   "conv2.weight",       "conv2.bias",
      "conv2.shape.weight", "conv2.shape.bias", "bn2.gamma", "bn2.beta",
      "fc.weight",    "fc.bias"};
  EXPECT_EQ(names, want);
  EXPECT_EQ(net.state().size(), want.size() + 4);
  EXPECT_EQ(net.dynamic_layers(), 2u);
}

TEST(Checkpoint, RoundTrip) {
  const auto d = temp_dir();
  Network a(build_tiny_cnn(Variant::onedconv), 1);
  shift_shape_bias(a, 0.25);
  save_checkpoint(a, d / "a.ckpt");
  Network b(build_tiny_cnn(Variant::onedconv), 2);
  load_checkpoint(b, d / "a.ckpt");
  save_checkpoint(b, d / "b.ckpt");
  EXPECT_EQ(bytes(d / "a.ckpt"), bytes(d / "b.ckpt"));
  const auto raw = bytes(d / "a.ckpt");
  EXPECT_EQ(std::string(raw.begin(), raw.begin() + 4), "ODC1");
  EXPECT_EQ(checkpoint_names(d / "a.ckpt").front(), "conv1.weight");
}

TEST(Checkpoint, Mismatches) {
  const auto d = temp_dir();
  Network van(build_tiny_cnn(Variant::vanilla), 1);
  save_checkpoint(van, d / "v.ckpt");
  Network dyn(build_tiny_cnn(Variant::onedconv), 1);
  EXPECT_THROW(load_checkpoint(dyn, d / "v.ckpt"), std::runtime_error);
  Network wide(build_tiny_cnn(Variant::vanilla, 10, 3), 1);
  EXPECT_THROW(load_checkpoint(wide, d / "v.ckpt"), std::runtime_error);
  std::ofstream(d / "junk") << "NOPE";
  EXPECT_THROW(load_checkpoint(van, d / "junk"), std::runtime_error);
  EXPECT_THROW(load_checkpoint(van, d / "absent"), std::runtime_error);
}

TEST(Config, ParsesKeysAndComments) {
  const auto c = parse_config(
      "# desk run\nmodel = resnet18\nvariant=vanilla\nepochs = 3 # short\n"
      "lr = 0.2\nbatch_size = 8\ndistortion = rts\nrandom_crop = true\nlog_wall_time = false\n");
  EXPECT_EQ(c.model, "resnet18");
  EXPECT_EQ(c.variant, Variant::vanilla);
  EXPECT_EQ(c.epochs, 3u);
  EXPECT_EQ(c.lr, 0.2);
  EXPECT_EQ(c.batch_size, 8u);
  EXPECT_EQ(c.train_distortion, DistortionMode::rts);
  EXPECT_TRUE(c.random_crop);
  EXPECT_FALSE(c.log_wall_time);
  EXPECT_EQ(c.momentum, 0.9);
  EXPECT_EQ(c.weight_decay, 5e-3);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("colour = red\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("epochs = many\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("lr = 0\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("batch_size = 0\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("model = vgg\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("just words\n"), std::invalid_argument);
  try {
    parse_config("epochs = 1\n\nthreads = x\n");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

Splits synthetic_splits(std::size_t n) {
  Splits s;
  s.train = synthetic(n, 32, 11);
  s.tests.emplace_back("test-origin", synthetic(20, 32, 12));
  return s;
}

TEST(Train, ZeroEpochsLeavesInitialization) {
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 9;
  const auto r = train(cfg, synthetic_splits(20));
  EXPECT_TRUE(r.metrics.empty());
  Network fresh(build_tiny_cnn(Variant::onedconv), 9);
  Network trained = r.model;
  auto a = trained.parameters(), b = fresh.parameters();
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].value->values(), b[k].value->values());
}

TEST(Train, LearnsSeparableDataAndIsDeterministic) {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 10;
  cfg.log_wall_time = false;
  const auto splits = synthetic_splits(60);
  const auto a = train(cfg, splits);
  const auto b = train(cfg, splits);
  ASSERT_EQ(a.metrics.size(), 4u);
  for (std::size_t k = 0; k < a.metrics.size(); ++k)
    EXPECT_EQ(metrics_row(a.metrics[k]), metrics_row(b.metrics[k]));
  EXPECT_LT(a.metrics[2].loss, std::log(10.0));
  EXPECT_EQ(a.metrics.back().split, "test-origin");
  EXPECT_GE(a.metrics.back().accuracy, 0.9);
}

TEST(Train, OneStepChangesParameters) {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 10;
  const auto r = train(cfg, synthetic_splits(10));
  Network trained = r.model;
  Network fresh(build_tiny_cnn(Variant::onedconv), cfg.seed);
  EXPECT_NE(trained.parameters()[0].value->values(), fresh.parameters()[0].value->values());
}

TEST(Train, DivergenceIsReported) {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 10;
  auto splits = synthetic_splits(60);
  splits.train.images[123] = std::nan("");
  EXPECT_THROW(train(cfg, splits), DivergenceError);
}

TEST(Train, MetricsCsv) {
  const auto d = temp_dir();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 10;
  cfg.metrics_path = d / "m.csv";
  cfg.checkpoint_path = d / "m.ckpt";
  train(cfg, synthetic_splits(20));
  std::ifstream f(cfg.metrics_path);
  std::string header, row;
  std::getline(f, header);
  std::getline(f, row);
  EXPECT_EQ(header, "epoch,split,loss,accuracy,seconds,offset_dev_conv1,offset_dev_conv2");
  EXPECT_EQ(row.rfind("1,train,", 0), 0u);
  EXPECT_TRUE(fs::exists(cfg.checkpoint_path));
}

TEST(Evaluate, ConstantPredictorIsChance) {
  Network net(build_tiny_cnn(Variant::vanilla), 1);
  for (auto& p : net.parameters()) {
    if (p.name == "fc.weight") p.value->fill(0.0);
    if (p.name == "fc.bias") p.value->fill(0.0);
  }
  // All logits tie, so every prediction is class 0.
  const auto ds = synthetic(50, 32, 4);
  const auto r = evaluate(net, ds);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.1);
  EXPECT_NEAR(r.loss, std::log(10.0), 1e-12);
  EXPECT_EQ(metrics_row(evaluate(net, ds)), metrics_row(r));
}

TEST(DumpOffsets, UntrainedIsZeroAndVanillaIsRejected) {
  const auto d = temp_dir();
  const auto ds = synthetic(10, 32, 5);
  Network dyn(build_tiny_cnn(Variant::onedconv), 1);
  const auto rows = dump_offsets(dyn, ds, d / "o.csv");
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.max_abs, 0.0);
    EXPECT_EQ(r.mean(), 0.0);
  }
  std::ifstream f(d / "o.csv");
  std::string header;
  std::getline(f, header);
  EXPECT_EQ(header, "layer,name,mean_abs_dev,max_abs_dev,max_sample,max_filter,max_h,max_w,max_value");
  Network van(build_tiny_cnn(Variant::vanilla), 1);
  try {
    dump_offsets(van, ds, d / "v.csv");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "no dynamic layers");
  }
}

TEST(DumpOffsets, ReportsShiftedShape) {
  const auto d = temp_dir();
  Network dyn(build_tiny_cnn(Variant::onedconv), 1);
  shift_shape_bias(dyn, 0.5);
  const auto rows = dump_offsets(dyn, synthetic(4, 32, 6), d / "o.csv");
  // K = 3: the outer filters each move by one gap delta.
  for (const auto& r : rows) {
    EXPECT_DOUBLE_EQ(r.mean(), 0.5);
    EXPECT_DOUBLE_EQ(r.max_abs, 0.5);
  }
}

}  // namespace
