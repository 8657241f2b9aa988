#include "odc/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>

#include "odc/random.hpp"

namespace odc {

struct Network::Node {
  LayerDescriptor desc;

  // conv / onedconv
  ConvWeights w;
  ConvWeights gw;
  ShapeConvWeights sw;
  ShapeConvWeights gsw;
  // batchnorm
  BatchNormParams bn;
  Tensor g_gamma;
  Tensor g_beta;
  // fc
  FcWeights fc;
  FcWeights gfc;

  // forward caches
  Tensor input;
  OneDConvCache odc;
  BatchNormCache bn_cache;
  MaxPoolCache pool_cache;
  bool has_shortcut = false;  // residual_end only
};

void OffsetDeviation::merge(const OffsetDeviation& o, std::size_t sample_offset) {
  if (layer.empty()) layer = o.layer;
  if (o.count > 0 && (count == 0 || o.max_abs > max_abs)) {
    max_abs = o.max_abs;
    max_value = o.max_value;
    max_sample = o.max_sample + sample_offset;
    max_filter = o.max_filter;
    max_h = o.max_h;
    max_w = o.max_w;
  }
  sum += o.sum;
  count += o.count;
}

Network::Network(ModelGraph graph, std::uint64_t seed) : graph_(std::move(graph)) {
  if (!graph_.resolved) resolve(graph_);
  Rng rng(stream_key(seed, 0x1417));
  nodes_.resize(graph_.layers.size());
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    Node& n = nodes_[k];
    n.desc = graph_.layers[k];
    switch (n.desc.kind) {
      case LayerKind::conv:
      case LayerKind::onedconv: {
        const ConvSpec& spec = n.desc.conv;
        n.w = ConvWeights::zeros(spec);
        const double fan_in =
            static_cast<double>(spec.in_channels * spec.kernel * spec.kernel);
        const double bound = std::sqrt(6.0 / fan_in);
        for (double& v : n.w.kernel.data()) v = rng.uniform(-bound, bound);
        n.gw = ConvWeights::zeros(spec);
        if (n.desc.kind == LayerKind::onedconv) {
          n.sw = ShapeConvWeights::zeros(spec);
          n.gsw = ShapeConvWeights::zeros(spec);
        }
        break;
      }
      case LayerKind::batchnorm:
        n.bn = BatchNormParams(n.desc.in.c);
        n.g_gamma = Tensor(vector_shape(n.desc.in.c));
        n.g_beta = Tensor(vector_shape(n.desc.in.c));
        break;
      case LayerKind::fc: {
        const std::size_t in = n.desc.in.c * n.desc.in.h * n.desc.in.w;
        n.fc.weight = Tensor({1, 1, n.desc.features, in});
        n.fc.bias = Tensor(vector_shape(n.desc.features));
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        for (double& v : n.fc.weight.data()) v = rng.uniform(-bound, bound);
        n.gfc = FcWeights{Tensor(n.fc.weight.shape()), Tensor(n.fc.bias.shape())};
        break;
      }
      default:
        break;
    }
  }
  // Mark which residual joins have a projection shortcut.
  std::vector<bool> projected;
  for (auto& n : nodes_) {
    if (n.desc.kind == LayerKind::residual_begin) {
      projected.push_back(false);
    } else if (n.desc.kind == LayerKind::shortcut) {
      projected.back() = true;
    } else if (n.desc.kind == LayerKind::residual_end) {
      n.has_shortcut = projected.back();
      projected.pop_back();
    }
  }
}

Network::~Network() = default;
Network::Network(const Network&) = default;
Network& Network::operator=(const Network&) = default;
Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;

Tensor Network::forward(const Tensor& x, bool training) {
  const Extents& in = graph_.input;
  if (x.shape().c != in.c || x.shape().h != in.h || x.shape().w != in.w) {
    throw ShapeError("network expects (N," + std::to_string(in.c) + "," +
                     std::to_string(in.h) + "," + std::to_string(in.w) +
                     ") input, got " + to_string(x.shape()));
  }
  struct Frame {
    Tensor skip;
    Tensor main_out;
  };
  std::vector<Frame> frames;
  Tensor cur = x;
  for (auto& n : nodes_) {
    switch (n.desc.kind) {
      case LayerKind::conv:
        n.input = cur;
        cur = conv2d_forward(cur, n.desc.conv, n.w);
        break;
      case LayerKind::onedconv: {
        auto r = onedconv_forward(cur, n.desc.conv, n.w, n.sw);
        n.odc = std::move(r.cache);
        cur = std::move(r.y);
        break;
      }
      case LayerKind::batchnorm:
        cur = batchnorm_forward(cur, n.bn, training, &n.bn_cache);
        break;
      case LayerKind::relu:
        n.input = cur;
        cur = relu(cur);
        break;
      case LayerKind::maxpool:
        cur = maxpool_forward(cur, n.desc.pool, &n.pool_cache);
        break;
      case LayerKind::avgpool:
        n.input = Tensor(cur.shape());
        cur = avgpool_forward(cur, n.desc.pool);
        break;
      case LayerKind::global_avgpool: {
        if (cur.shape().h != cur.shape().w) {
          throw ShapeError("global average pool needs square planes");
        }
        n.input = Tensor(cur.shape());
        cur = avgpool_forward(cur, PoolSpec{cur.shape().h, 1, 0});
        break;
      }
      case LayerKind::fc:
        n.input = cur;
        cur = fc_forward(cur, n.fc);
        break;
      case LayerKind::residual_begin:
        frames.push_back({cur, {}});
        break;
      case LayerKind::shortcut:
        frames.back().main_out = std::move(cur);
        cur = frames.back().skip;
        break;
      case LayerKind::residual_end: {
        Frame f = std::move(frames.back());
        frames.pop_back();
        add_into(cur, n.has_shortcut ? f.main_out : f.skip);
        break;
      }
    }
  }
  return cur;
}

void Network::backward(const Tensor& grad_logits) {
  struct GradFrame {
    Tensor join;
    Tensor skip;
  };
  std::vector<GradFrame> frames;
  Tensor g = grad_logits;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = *it;
    switch (n.desc.kind) {
      case LayerKind::conv: {
        auto r = conv2d_backward(n.input, n.desc.conv, n.w, g);
        n.gw.kernel = std::move(r.grad_kernel);
        n.gw.bias = std::move(r.grad_bias);
        g = std::move(r.grad_x);
        break;
      }
      case LayerKind::onedconv: {
        auto r = onedconv_backward(n.odc, g);
        n.gw.kernel = std::move(r.grad_kernel);
        n.gw.bias = std::move(r.grad_bias);
        n.gsw.kernel = std::move(r.grad_shape_kernel);
        n.gsw.bias = std::move(r.grad_shape_bias);
        g = std::move(r.grad_x);
        break;
      }
      case LayerKind::batchnorm: {
        auto r = batchnorm_backward(n.bn, n.bn_cache, g);
        n.g_gamma = std::move(r.grad_gamma);
        n.g_beta = std::move(r.grad_beta);
        g = std::move(r.grad_x);
        break;
      }
      case LayerKind::relu:
        g = relu_backward(n.input, g);
        break;
      case LayerKind::maxpool:
        g = maxpool_backward(n.pool_cache, g);
        break;
      case LayerKind::avgpool:
        g = avgpool_backward(n.input.shape(), n.desc.pool, g);
        break;
      case LayerKind::global_avgpool:
        g = avgpool_backward(n.input.shape(),
                             PoolSpec{n.input.shape().h, 1, 0}, g);
        break;
      case LayerKind::fc: {
        auto r = fc_backward(n.input, n.fc, g);
        n.gfc.weight = std::move(r.grad_weight);
        n.gfc.bias = std::move(r.grad_bias);
        g = std::move(r.grad_x);
        break;
      }
      case LayerKind::residual_end:
        frames.push_back({g, n.has_shortcut ? Tensor() : g});
        break;
      case LayerKind::shortcut:
        frames.back().skip = std::move(g);
        g = frames.back().join;
        break;
      case LayerKind::residual_begin:
        add_into(g, frames.back().skip);
        frames.pop_back();
        break;
    }
  }
}

std::vector<ParamRef> Network::parameters() {
  std::vector<ParamRef> out;
  for (auto& n : nodes_) {
    const std::string& p = n.desc.name;
    switch (n.desc.kind) {
      case LayerKind::conv:
      case LayerKind::onedconv:
        out.push_back({p + ".weight", &n.w.kernel, &n.gw.kernel});
        if (n.desc.conv.has_bias) out.push_back({p + ".bias", &n.w.bias, &n.gw.bias});
        if (n.desc.kind == LayerKind::onedconv) {
          out.push_back({p + ".shape.weight", &n.sw.kernel, &n.gsw.kernel});
          out.push_back({p + ".shape.bias", &n.sw.bias, &n.gsw.bias});
        }
        break;
      case LayerKind::batchnorm:
        out.push_back({p + ".gamma", &n.bn.gamma, &n.g_gamma});
        out.push_back({p + ".beta", &n.bn.beta, &n.g_beta});
        break;
      case LayerKind::fc:
        out.push_back({p + ".weight", &n.fc.weight, &n.gfc.weight});
        out.push_back({p + ".bias", &n.fc.bias, &n.gfc.bias});
        break;
      default:
        break;
    }
  }
  return out;
}

std::vector<NamedTensor> Network::state() {
  std::vector<NamedTensor> out;
  for (auto& p : parameters()) out.push_back({p.name, p.value});
  for (auto& n : nodes_) {
    if (n.desc.kind == LayerKind::batchnorm) {
      out.push_back({n.desc.name + ".running_mean", &n.bn.running_mean});
      out.push_back({n.desc.name + ".running_var", &n.bn.running_var});
    }
  }
  return out;
}

std::size_t Network::dynamic_layers() const {
  std::size_t k = 0;
  for (const auto& n : nodes_) k += n.desc.kind == LayerKind::onedconv;
  return k;
}

std::vector<OffsetDeviation> Network::offset_deviation() const {
  std::vector<OffsetDeviation> out;
  for (const auto& n : nodes_) {
    if (n.desc.kind != LayerKind::onedconv) continue;
    OffsetDeviation dev;
    dev.layer = n.desc.name;
    const Tensor& d = n.odc.offsets;
    const auto& s = d.shape();
    const std::size_t w_pad = n.odc.x_pad.shape().w;
    const std::size_t center = center_filter(s.c);
    bool first = true;
    for (std::size_t b = 0; b < s.n; ++b) {
      for (std::size_t i = 0; i < s.c; ++i) {
        if (i == center) continue;
        const double square = square_offset(i, s.c, w_pad);
        for (std::size_t h = 0; h < s.h; ++h) {
          for (std::size_t w = 0; w < s.w; ++w) {
            const double v = d.at(b, i, h, w) - square;
            const double a = std::abs(v);
            dev.sum += a;
            ++dev.count;
            if (first || a > dev.max_abs) {
              first = false;
              dev.max_abs = a;
              dev.max_value = v;
              dev.max_sample = b;
              dev.max_filter = i;
              dev.max_h = h;
              dev.max_w = w;
            }
          }
        }
      }
    }
    out.push_back(dev);
  }
  return out;
}

// Checkpoints ----------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'O', 'D', 'C', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8),
                     static_cast<char>(v >> 16), static_cast<char>(v >> 24)};
  out.write(b, 4);
}

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    if (buf_.size() < 4 || std::memcmp(buf_.data(), kMagic, 4) != 0) {
      throw std::runtime_error("checkpoint '" + path.string() + "': bad magic");
    }
    pos_ = 4;
  }
  bool done() const { return pos_ == buf_.size(); }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 3; k >= 0; --k) {
      v = (v << 8) | static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(k)]);
    }
    pos_ += 4;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw std::runtime_error("checkpoint truncated");
  }
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

struct Entry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

std::vector<Entry> read_entries(const std::filesystem::path& path) {
  Reader r(path);
  std::vector<Entry> out;
  while (!r.done()) {
    Entry e;
    e.name = r.bytes(r.u32());
    e.shape.n = r.u32();
    e.shape.c = r.u32();
    e.shape.h = r.u32();
    e.shape.w = r.u32();
    e.values.resize(e.shape.size());
    for (float& v : e.values) v = std::bit_cast<float>(r.u32());
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

void save_checkpoint(Network& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path.string() + "'");
  out.write(kMagic, 4);
  for (const auto& [name, t] : net.state()) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Shape& s = t->shape();
    put_u32(out, static_cast<std::uint32_t>(s.n));
    put_u32(out, static_cast<std::uint32_t>(s.c));
    put_u32(out, static_cast<std::uint32_t>(s.h));
    put_u32(out, static_cast<std::uint32_t>(s.w));
    for (double v : t->data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint '" + path.string() + "'");
}

void load_checkpoint(Network& net, const std::filesystem::path& path) {
  auto entries = read_entries(path);
  std::map<std::string, Entry*> by_name;
  for (auto& e : entries) by_name[e.name] = &e;
  auto state = net.state();
  if (entries.size() != state.size()) {
    throw std::runtime_error("checkpoint has " + std::to_string(entries.size()) +
                             " entries, model expects " + std::to_string(state.size()));
  }
  for (auto& [name, t] : state) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint lacks '" + name + "'");
    const Entry& e = *it->second;
    if (e.shape != t->shape()) {
      throw std::runtime_error("checkpoint entry '" + name + "' has shape " +
                               to_string(e.shape) + ", model expects " +
                               to_string(t->shape()));
    }
    for (std::size_t k = 0; k < e.values.size(); ++k) (*t)[k] = e.values[k];
  }
}

std::vector<std::string> checkpoint_names(const std::filesystem::path& path) {
  std::vector<std::string> names;
  for (auto& e : read_entries(path)) names.push_back(e.name);
  return names;
}

}  // namespace odc
