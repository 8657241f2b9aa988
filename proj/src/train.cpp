#include "odc/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "odc/layers.hpp"
#include "odc/parallel.hpp"
#include "odc/random.hpp"

namespace odc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw std::invalid_argument("'" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("'" + key + "' expects true/false, got '" + v + "'");
}

void apply(TrainConfig& c, const std::string& key, const std::string& v) {
  if (key == "model") c.model = v;
  else if (key == "variant") c.variant = parse_variant(v);
  else if (key == "epochs") c.epochs = parse_number<std::size_t>(key, v);
  else if (key == "batch_size") c.batch_size = parse_number<std::size_t>(key, v);
  else if (key == "lr") c.lr = parse_number<double>(key, v);
  else if (key == "momentum") c.momentum = parse_number<double>(key, v);
  else if (key == "weight_decay") c.weight_decay = parse_number<double>(key, v);
  else if (key == "lr_step") c.lr_step = parse_number<std::size_t>(key, v);
  else if (key == "lr_gamma") c.lr_gamma = parse_number<double>(key, v);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "train_images") c.train_images = v;
  else if (key == "train_labels") c.train_labels = v;
  else if (key == "test_images") c.test_images = v;
  else if (key == "test_labels") c.test_labels = v;
  else if (key == "distortion") {
    if (v == "origin") c.train_distortion.reset();
    else c.train_distortion = parse_distortion_mode(v);
  } else if (key == "distortion_seed") c.distortion_seed = parse_number<std::uint64_t>(key, v);
  else if (key == "train_limit") c.train_limit = parse_number<std::size_t>(key, v);
  else if (key == "test_limit") c.test_limit = parse_number<std::size_t>(key, v);
  else if (key == "threads") c.threads = parse_number<std::size_t>(key, v);
  else if (key == "random_crop") c.random_crop = parse_bool(key, v);
  else if (key == "eval_every") c.eval_every = parse_number<std::size_t>(key, v);
  else if (key == "log_wall_time") c.log_wall_time = parse_bool(key, v);
  else if (key == "metrics") c.metrics_path = v;
  else if (key == "checkpoint") c.checkpoint_path = v;
  else throw std::invalid_argument("unknown key '" + key + "'");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

// Copies the images at `idx` into one batch, optionally with a random
// pad-4 crop per image.
Tensor gather(const LabeledDataset& ds, std::span<const std::size_t> idx,
              bool crop, Rng& rng, std::vector<int>& labels) {
  const auto& s = ds.images.shape();
  Tensor out({idx.size(), s.c, s.h, s.w});
  labels.resize(idx.size());
  constexpr std::size_t pad = 4;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    labels[k] = ds.labels[idx[k]];
    if (!crop) {
      auto src = ds.images.sample(idx[k]);
      std::copy(src.begin(), src.end(), out.sample(k).begin());
      continue;
    }
    const auto dy = static_cast<std::ptrdiff_t>(rng.below(2 * pad + 1)) - static_cast<std::ptrdiff_t>(pad);
    const auto dx = static_cast<std::ptrdiff_t>(rng.below(2 * pad + 1)) - static_cast<std::ptrdiff_t>(pad);
    for (std::size_t c = 0; c < s.c; ++c) {
      auto src = ds.images.plane(idx[k], c);
      auto dst = out.plane(k, c);
      for (std::size_t h = 0; h < s.h; ++h) {
        for (std::size_t w = 0; w < s.w; ++w) {
          const auto sh = static_cast<std::ptrdiff_t>(h) + dy;
          const auto sw = static_cast<std::ptrdiff_t>(w) + dx;
          const bool inside = sh >= 0 && sw >= 0 &&
                              sh < static_cast<std::ptrdiff_t>(s.h) &&
                              sw < static_cast<std::ptrdiff_t>(s.w);
          dst[flat_index(h, w, s.w)] =
              inside ? src[flat_index(static_cast<std::size_t>(sh),
                                      static_cast<std::size_t>(sw), s.w)]
                     : 0.0;
        }
      }
    }
  }
  return out;
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const std::size_t classes = logits.shape().c;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < classes; ++k) {
      if (logits.at(b, k, 0, 0) > logits.at(b, best, 0, 0)) best = k;
    }
    correct += static_cast<int>(best) == labels[b];
  }
  return correct;
}

void merge_all(std::vector<OffsetDeviation>& acc,
               const std::vector<OffsetDeviation>& batch, std::size_t offset) {
  if (acc.empty()) acc.resize(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) acc[k].merge(batch[k], offset);
}

}  // namespace

void TrainConfig::validate() const {
  if (model != "tiny-cnn" && model != "resnet18") {
    throw std::invalid_argument("model must be tiny-cnn or resnet18, got '" + model + "'");
  }
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
  if (!(lr_gamma > 0.0)) throw std::invalid_argument("lr_gamma must be positive");
  if (threads == 0) throw std::invalid_argument("threads must be positive");
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(no) + ": expected key = value");
    }
    try {
      apply(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(no) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  TrainConfig cfg = parse_config(ss.str());
  // Relative paths are taken relative to the config file.
  const auto base = path.parent_path();
  for (auto* p : {&cfg.train_images, &cfg.train_labels, &cfg.test_images,
                  &cfg.test_labels, &cfg.metrics_path, &cfg.checkpoint_path}) {
    if (!p->empty() && p->is_relative()) *p = base / *p;
  }
  return cfg;
}

Splits load_splits(const TrainConfig& cfg) {
  Splits s;
  s.train = load_idx(cfg.train_images, cfg.train_labels, cfg.train_limit);
  if (cfg.train_distortion) {
    s.train = distort_dataset(
        s.train, DistortionSpec::for_mode(*cfg.train_distortion, cfg.distortion_seed));
  }
  LabeledDataset test = load_idx(cfg.test_images, cfg.test_labels, cfg.test_limit);
  for (auto mode : {DistortionMode::rotated, DistortionMode::rts}) {
    s.tests.emplace_back("test-" + to_string(mode),
                         distort_dataset(test, DistortionSpec::for_mode(mode, cfg.distortion_seed)));
  }
  s.tests.emplace(s.tests.begin(), "test-origin", std::move(test));
  return s;
}

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  set_thread_count(cfg.threads);
  return train(cfg, load_splits(cfg));
}

TrainResult train(const TrainConfig& cfg, const Splits& data) {
  cfg.validate();
  set_thread_count(cfg.threads);
  const LabeledDataset& ds = data.train;
  if (ds.size() == 0) throw std::invalid_argument("training set is empty");
  const auto& s = ds.images.shape();
  TrainResult res{Network(build_model(cfg.model, cfg.variant, 10, s.c), cfg.seed), {}};
  Network& net = res.model;

  SgdState opt;
  opt.learning_rate = cfg.lr;
  opt.momentum = cfg.momentum;
  opt.weight_decay = cfg.weight_decay;

  auto params = net.parameters();
  std::vector<Tensor*> values;
  std::vector<const Tensor*> grads;
  for (auto& p : params) {
    values.push_back(p.value);
    grads.push_back(p.grad);
  }

  std::vector<std::size_t> order(ds.size());
  std::vector<int> labels;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double start = now_seconds();
    if (cfg.lr_step > 0) {
      opt.learning_rate =
          cfg.lr * std::pow(cfg.lr_gamma, static_cast<double>((epoch - 1) / cfg.lr_step));
    }
    Rng rng(stream_key(cfg.seed, epoch));
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    for (std::size_t k = order.size(); k > 1; --k) {
      std::swap(order[k - 1], order[rng.below(k)]);
    }

    MetricsRecord rec;
    rec.epoch = epoch;
    rec.split = "train";
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - b);
      Tensor x = gather(ds, std::span(order).subspan(b, n), cfg.random_crop, rng, labels);
      Tensor logits = net.forward(x, true);
      LossResult lr = softmax_cross_entropy(logits, labels);
      if (!std::isfinite(lr.loss)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(b / cfg.batch_size) +
                              " (lr " + fmt(opt.learning_rate) + ")");
      }
      loss_sum += lr.loss * static_cast<double>(n);
      correct += count_correct(logits, labels);
      merge_all(rec.offsets, net.offset_deviation(), b);
      net.backward(lr.grad_logits);
      sgd_step(values, grads, opt);
    }
    rec.loss = loss_sum / static_cast<double>(ds.size());
    rec.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
    rec.seconds = cfg.log_wall_time ? now_seconds() - start : 0.0;
    res.metrics.push_back(rec);

    const bool last = epoch == cfg.epochs;
    if (last || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0)) {
      for (const auto& [name, test] : data.tests) {
        const double t0 = now_seconds();
        MetricsRecord r = evaluate(net, test, name);
        r.epoch = epoch;
        r.seconds = cfg.log_wall_time ? now_seconds() - t0 : 0.0;
        res.metrics.push_back(std::move(r));
      }
    }
  }
  if (!cfg.metrics_path.empty()) append_metrics(cfg.metrics_path, net, res.metrics);
  if (!cfg.checkpoint_path.empty()) save_checkpoint(net, cfg.checkpoint_path);
  return res;
}

MetricsRecord evaluate(Network& model, const LabeledDataset& ds,
                       const std::string& split) {
  MetricsRecord rec;
  rec.split = split;
  if (ds.size() == 0) return rec;
  constexpr std::size_t batch = 100;
  std::vector<std::size_t> idx;
  std::vector<int> labels;
  Rng unused(0);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < ds.size(); b += batch) {
    const std::size_t n = std::min(batch, ds.size() - b);
    idx.resize(n);
    for (std::size_t k = 0; k < n; ++k) idx[k] = b + k;
    Tensor logits = model.forward(gather(ds, idx, false, unused, labels), false);
    loss_sum += softmax_cross_entropy(logits, labels).loss * static_cast<double>(n);
    correct += count_correct(logits, labels);
    merge_all(rec.offsets, model.offset_deviation(), b);
  }
  rec.loss = loss_sum / static_cast<double>(ds.size());
  rec.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  return rec;
}

std::vector<OffsetDeviation> dump_offsets(Network& model,
                                          const LabeledDataset& ds,
                                          const std::filesystem::path& out) {
  if (model.dynamic_layers() == 0) throw std::invalid_argument("no dynamic layers");
  MetricsRecord r = evaluate(model, ds, "dump");
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + out.string() + "'");
  f << "layer,name,mean_abs_dev,max_abs_dev,max_sample,max_filter,max_h,max_w,max_value\n";
  for (std::size_t k = 0; k < r.offsets.size(); ++k) {
    const auto& d = r.offsets[k];
    f << k << ',' << d.layer << ',' << fmt(d.mean()) << ',' << fmt(d.max_abs) << ','
      << d.max_sample << ',' << d.max_filter << ',' << d.max_h << ',' << d.max_w
      << ',' << fmt(d.max_value) << '\n';
  }
  return r.offsets;
}

std::string metrics_header(const Network& model) {
  std::string h = "epoch,split,loss,accuracy,seconds";
  for (const auto& l : model.graph().layers) {
    if (l.kind == LayerKind::onedconv) h += ",offset_dev_" + l.name;
  }
  return h;
}

std::string metrics_row(const MetricsRecord& r) {
  std::string row = std::to_string(r.epoch) + ',' + r.split + ',' + fmt(r.loss) +
                    ',' + fmt(r.accuracy) + ',' + fmt(r.seconds);
  for (const auto& d : r.offsets) row += ',' + fmt(d.mean());
  return row;
}

void append_metrics(const std::filesystem::path& path, const Network& model,
                    const std::vector<MetricsRecord>& records) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream f(path, std::ios::app);
  if (!f) throw std::runtime_error("cannot write metrics '" + path.string() + "'");
  if (fresh) f << metrics_header(model) << '\n';
  for (const auto& r : records) f << metrics_row(r) << '\n';
}

}  // namespace odc
