#include "odc/accounting.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "odc/onedconv.hpp"
#include "odc/random.hpp"

namespace odc {

std::string to_string(Variant v) {
  return v == Variant::vanilla ? "vanilla" : "onedconv";
}

Variant parse_variant(const std::string& s) {
  if (s == "vanilla") return Variant::vanilla;
  if (s == "onedconv") return Variant::onedconv;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

namespace {

struct KindName {
  LayerKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {LayerKind::conv, "conv"},
    {LayerKind::onedconv, "onedconv"},
    {LayerKind::batchnorm, "bn"},
    {LayerKind::relu, "relu"},
    {LayerKind::maxpool, "maxpool"},
    {LayerKind::avgpool, "avgpool"},
    {LayerKind::global_avgpool, "global_avgpool"},
    {LayerKind::fc, "fc"},
    {LayerKind::residual_begin, "residual_begin"},
    {LayerKind::shortcut, "shortcut"},
    {LayerKind::residual_end, "residual_end"},
};

}  // namespace

std::string to_string(LayerKind k) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == k) return kn.name;
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& s) {
  for (const auto& kn : kKindNames) {
    if (s == kn.name) return kn.kind;
  }
  throw std::invalid_argument("unknown layer kind '" + s + "'");
}

void resolve(ModelGraph& g) {
  struct Block {
    Extents skip;
    Extents main_out;
    bool in_shortcut = false;
  };
  std::vector<Block> blocks;
  Extents cur = g.input;
  auto fail = [](const LayerDescriptor& l, const std::string& why) {
    throw ShapeError("layer '" + l.name + "': " + why);
  };
  for (auto& l : g.layers) {
    l.in = cur;
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::onedconv:
        l.conv.validate();
        if (cur.c != l.conv.in_channels) {
          fail(l, "expects " + std::to_string(l.conv.in_channels) +
                      " channels, gets " + std::to_string(cur.c));
        }
        if (cur.h + 2 * l.conv.pad() < l.conv.kernel ||
            cur.w + 2 * l.conv.pad() < l.conv.kernel) {
          fail(l, "input smaller than kernel");
        }
        cur = {l.conv.out_channels, l.conv.out_extent(cur.h),
               l.conv.out_extent(cur.w)};
        break;
      case LayerKind::batchnorm:
      case LayerKind::relu:
        break;
      case LayerKind::maxpool:
      case LayerKind::avgpool:
        if (cur.h + 2 * l.pool.padding < l.pool.kernel ||
            cur.w + 2 * l.pool.padding < l.pool.kernel || l.pool.stride == 0) {
          fail(l, "bad pooling window");
        }
        cur = {cur.c, l.pool.out_extent(cur.h), l.pool.out_extent(cur.w)};
        break;
      case LayerKind::global_avgpool:
        cur = {cur.c, 1, 1};
        break;
      case LayerKind::fc:
        if (l.features == 0) fail(l, "fc needs outputs");
        cur = {l.features, 1, 1};
        break;
      case LayerKind::residual_begin:
        blocks.push_back({cur, {}, false});
        break;
      case LayerKind::shortcut:
        if (blocks.empty() || blocks.back().in_shortcut) {
          fail(l, "shortcut outside a residual block");
        }
        blocks.back().main_out = cur;
        blocks.back().in_shortcut = true;
        cur = blocks.back().skip;
        break;
      case LayerKind::residual_end: {
        if (blocks.empty()) fail(l, "unmatched residual_end");
        const Block b = blocks.back();
        blocks.pop_back();
        const Extents other = b.in_shortcut ? b.main_out : b.skip;
        if (!(other == cur)) fail(l, "residual branches disagree in extents");
        break;
      }
    }
    l.out = cur;
  }
  if (!blocks.empty()) throw ShapeError("unterminated residual block");
  if (!g.layers.empty() && g.layers.back().kind == LayerKind::fc &&
      g.layers.back().features != g.classes) {
    throw ShapeError("final fc has " + std::to_string(g.layers.back().features) +
                     " outputs for " + std::to_string(g.classes) + " classes");
  }
  g.resolved = true;
}

namespace {

LayerDescriptor conv_layer(const std::string& name, Variant v, std::size_t cin,
                           std::size_t cout, std::size_t k, std::size_t stride,
                           bool bias) {
  LayerDescriptor l;
  l.kind = (v == Variant::onedconv && k == 3) ? LayerKind::onedconv
                                              : LayerKind::conv;
  l.name = name;
  l.conv = ConvSpec{cin, cout, k, stride, std::nullopt, bias};
  return l;
}

LayerDescriptor simple(LayerKind k, const std::string& name) {
  LayerDescriptor l;
  l.kind = k;
  l.name = name;
  return l;
}

}  // namespace

ModelGraph build_resnet18(Variant variant, std::size_t classes,
                          std::size_t in_channels, std::size_t input_hw) {
  ModelGraph g;
  g.model = "resnet18";
  g.variant = variant;
  g.classes = classes;
  g.input = {in_channels, input_hw, input_hw};
  auto& L = g.layers;
  L.push_back(conv_layer("conv1", variant, in_channels, 64, 3, 2, false));
  L.push_back(simple(LayerKind::batchnorm, "bn1"));
  L.push_back(simple(LayerKind::relu, "relu1"));
  std::size_t channels = 64;
  const std::size_t widths[] = {64, 128, 256, 512};
  for (std::size_t stage = 0; stage < 4; ++stage) {
    for (std::size_t block = 0; block < 2; ++block) {
      const std::string p = "layer" + std::to_string(stage + 1) + "." +
                            std::to_string(block) + ".";
      const std::size_t width = widths[stage];
      const std::size_t stride = (stage > 0 && block == 0) ? 2 : 1;
      L.push_back(simple(LayerKind::residual_begin, p + "begin"));
      L.push_back(conv_layer(p + "conv1", variant, channels, width, 3, stride,
                             false));
      L.push_back(simple(LayerKind::batchnorm, p + "bn1"));
      L.push_back(simple(LayerKind::relu, p + "relu1"));
      L.push_back(conv_layer(p + "conv2", variant, width, width, 3, 1, false));
      L.push_back(simple(LayerKind::batchnorm, p + "bn2"));
      if (stride != 1 || channels != width) {
        L.push_back(simple(LayerKind::shortcut, p + "shortcut"));
        L.push_back(conv_layer(p + "downsample.conv", variant, channels, width,
                               1, stride, false));
        L.push_back(simple(LayerKind::batchnorm, p + "downsample.bn"));
      }
      L.push_back(simple(LayerKind::residual_end, p + "add"));
      L.push_back(simple(LayerKind::relu, p + "relu2"));
      channels = width;
    }
  }
  L.push_back(simple(LayerKind::global_avgpool, "avgpool"));
  LayerDescriptor fc = simple(LayerKind::fc, "fc");
  fc.features = classes;
  L.push_back(fc);
  resolve(g);
  return g;
}

ModelGraph build_tiny_cnn(Variant variant, std::size_t classes,
                          std::size_t in_channels, std::size_t input_hw) {
  ModelGraph g;
  g.model = "tiny-cnn";
  g.variant = variant;
  g.classes = classes;
  g.input = {in_channels, input_hw, input_hw};
  auto& L = g.layers;
  LayerDescriptor pool = simple(LayerKind::maxpool, "pool1");
  pool.pool = PoolSpec{2, 2, 0};
  L.push_back(conv_layer("conv1", variant, in_channels, 16, 3, 1, true));
  L.push_back(simple(LayerKind::batchnorm, "bn1"));
  L.push_back(simple(LayerKind::relu, "relu1"));
  L.push_back(pool);
  L.push_back(conv_layer("conv2", variant, 16, 32, 3, 1, true));
  L.push_back(simple(LayerKind::batchnorm, "bn2"));
  L.push_back(simple(LayerKind::relu, "relu2"));
  pool.name = "pool2";
  L.push_back(pool);
  LayerDescriptor fc = simple(LayerKind::fc, "fc");
  fc.features = classes;
  L.push_back(fc);
  resolve(g);
  return g;
}

ModelGraph build_model(const std::string& model, Variant variant,
                       std::size_t classes, std::size_t in_channels) {
  if (model == "resnet18") return build_resnet18(variant, classes, in_channels);
  if (model == "tiny-cnn") return build_tiny_cnn(variant, classes, in_channels);
  throw std::invalid_argument("unknown model '" + model + "'");
}

std::uint64_t shape_conv_params(const ConvSpec& spec) {
  const std::uint64_t k = spec.kernel;
  return (k - 1) * (k * k * spec.in_channels + 1);
}

std::uint64_t layer_params(const LayerDescriptor& l) {
  switch (l.kind) {
    case LayerKind::conv:
    case LayerKind::onedconv: {
      const std::uint64_t k = l.conv.kernel;
      std::uint64_t n = k * k * l.conv.in_channels * l.conv.out_channels;
      if (l.conv.has_bias) n += l.conv.out_channels;
      if (l.kind == LayerKind::onedconv) n += shape_conv_params(l.conv);
      return n;
    }
    case LayerKind::batchnorm:
      return 2 * static_cast<std::uint64_t>(l.in.c);
    case LayerKind::fc: {
      const std::uint64_t in = l.in.c * l.in.h * l.in.w;
      return in * l.features + l.features;
    }
    default:
      return 0;
  }
}

std::uint64_t layer_buffers(const LayerDescriptor& l) {
  return l.kind == LayerKind::batchnorm ? 2 * static_cast<std::uint64_t>(l.in.c)
                                        : 0;
}

std::uint64_t count_params(const ModelGraph& g) {
  if (!g.resolved) throw UnresolvedGraphError("count_params: graph not resolved");
  std::uint64_t n = 0;
  for (const auto& l : g.layers) n += layer_params(l);
  return n;
}

std::uint64_t count_buffers(const ModelGraph& g) {
  if (!g.resolved) throw UnresolvedGraphError("count_buffers: graph not resolved");
  std::uint64_t n = 0;
  for (const auto& l : g.layers) n += layer_buffers(l);
  return n;
}

FlopCount count_flops(const LayerDescriptor& l) {
  if (!l.is_conv()) return {};
  const std::uint64_t hw = static_cast<std::uint64_t>(l.out.h) * l.out.w;
  const std::uint64_t k = l.conv.kernel;
  const std::uint64_t per = l.conv.in_channels * k * k + 1;
  FlopCount f;
  f.main = 2 * hw * l.conv.out_channels * per;
  if (l.kind == LayerKind::onedconv) f.overhead = 2 * hw * (k - 1) * per;
  return f;
}

FlopCount count_flops(const ModelGraph& g) {
  if (!g.resolved) throw UnresolvedGraphError("count_flops: graph not resolved");
  FlopCount total;
  for (const auto& l : g.layers) {
    const auto f = count_flops(l);
    total.main += f.main;
    total.overhead += f.overhead;
  }
  return total;
}

// Instrumented execution ---------------------------------------------------

namespace {

/// Real number whose arithmetic increments the active tally.
class Counted {
 public:
  Counted() = default;
  Counted(double v) : v_(v) {}  // NOLINT: implicit by design of the scalar
  double value() const { return v_; }

  static std::uint64_t*& tally() {
    thread_local std::uint64_t* t = nullptr;
    return t;
  }

  friend Counted operator+(Counted a, Counted b) { return bump(a.v_ + b.v_); }
  friend Counted operator-(Counted a, Counted b) { return bump(a.v_ - b.v_); }
  friend Counted operator*(Counted a, Counted b) { return bump(a.v_ * b.v_); }
  Counted& operator+=(Counted o) { return *this = *this + o; }

 private:
  static Counted bump(double v) {
    if (tally() != nullptr) ++*tally();
    return Counted(v);
  }
  double v_ = 0.0;
};

/// Routes Counted arithmetic into `bucket` for the scope's lifetime.
class TallyScope {
 public:
  explicit TallyScope(std::uint64_t& bucket) : prev_(Counted::tally()) {
    Counted::tally() = &bucket;
  }
  ~TallyScope() { Counted::tally() = prev_; }
  TallyScope(const TallyScope&) = delete;
  TallyScope& operator=(const TallyScope&) = delete;

 private:
  std::uint64_t* prev_;
};

/// Direct convolution of a padded plane stack (C, Hp, Wp) given as a
/// callback producing the sampled value for (c, i, n, ho, wo). Every tap and
/// the bias are accumulated as multiply-adds.
template <typename Sample>
void counted_conv(const ConvSpec& spec, std::size_t h_out, std::size_t w_out,
                  const Tensor& kernel, const Tensor& bias, Sample&& sample,
                  std::uint64_t& bucket) {
  const std::size_t k = spec.kernel;
  for (std::size_t o = 0; o < spec.out_channels; ++o) {
    for (std::size_t ho = 0; ho < h_out; ++ho) {
      for (std::size_t wo = 0; wo < w_out; ++wo) {
        Counted acc = 0.0;
        for (std::size_t c = 0; c < spec.in_channels; ++c) {
          for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t n = 0; n < k; ++n) {
              const Counted x = sample(c, i, n, ho, wo);
              const TallyScope scope(bucket);
              acc += Counted(kernel.at(o, c, i, n)) * x;
            }
          }
        }
        const TallyScope scope(bucket);
        acc += Counted(bias.empty() ? 0.0 : bias[o]) * Counted(1.0);
        (void)acc.value();
      }
    }
  }
}

}  // namespace

MeasuredFlops measured_flops(const LayerDescriptor& layer, const Tensor& input) {
  MeasuredFlops m;
  if (!layer.is_conv() || input.empty()) return m;
  const ConvSpec& spec = layer.conv;
  spec.validate();
  if (input.shape().c != spec.in_channels) {
    throw ShapeError("measured_flops: input channels do not match layer");
  }
  Rng rng(stream_key(0x0f10f5, spec.in_channels * 131 + spec.out_channels));
  const Tensor kernel =
      random_tensor({spec.out_channels, spec.in_channels, spec.kernel,
                     spec.kernel}, rng);
  const Tensor bias = random_tensor(vector_shape(spec.out_channels), rng);
  const std::size_t pad = spec.pad();
  const std::size_t k = spec.kernel;
  const std::size_t h_out = spec.out_extent(input.shape().h);
  const std::size_t w_out = spec.out_extent(input.shape().w);
  const Tensor x_pad = pad_planes(input, pad);
  const std::size_t w_pad = x_pad.shape().w;

  for (std::size_t b = 0; b < input.shape().n; ++b) {
    auto grid = [&](std::size_t c, std::size_t i, std::size_t n, std::size_t ho,
                    std::size_t wo) {
      return Counted(x_pad.at(b, c, ho * spec.stride + i, wo * spec.stride + n));
    };
    if (layer.kind == LayerKind::conv) {
      counted_conv(spec, h_out, w_out, kernel, bias, grid, m.main);
      continue;
    }

    // Shape convolution, then gaps and cumulative offsets.
    const ConvSpec sspec = shape_conv_spec(spec);
    const Tensor skernel = random_tensor({k - 1, spec.in_channels, k, k}, rng,
                                         -0.05, 0.05);
    const Tensor sbias = random_tensor(vector_shape(k - 1), rng, -0.5, 0.5);
    Tensor shape({1, k - 1, h_out, w_out});
    {
      // Values are needed for the offsets, so run the counted conv and a
      // plain evaluation side by side.
      counted_conv(sspec, h_out, w_out, skernel, sbias, grid, m.overhead);
      for (std::size_t j = 0; j + 1 < k; ++j) {
        for (std::size_t ho = 0; ho < h_out; ++ho) {
          for (std::size_t wo = 0; wo < w_out; ++wo) {
            double acc = sbias[j];
            for (std::size_t c = 0; c < spec.in_channels; ++c) {
              for (std::size_t i = 0; i < k; ++i) {
                for (std::size_t n = 0; n < k; ++n) {
                  acc += skernel.at(j, c, i, n) *
                         x_pad.at(b, c, ho * spec.stride + i,
                                  wo * spec.stride + n);
                }
              }
            }
            shape.at(0, j, ho, wo) = acc;
          }
        }
      }
    }
    const std::size_t center = center_filter(k);
    Tensor offsets({1, k, h_out, w_out});
    {
      const TallyScope scope(m.overhead);
      for (std::size_t p = 0; p < h_out * w_out; ++p) {
        Counted acc = 0.0;
        for (std::size_t i = center + 1; i < k; ++i) {
          const Counted gap =
              Counted(static_cast<double>(w_pad)) + Counted(shape.plane(0, i - 1)[p]);
          acc = acc + gap;
          offsets.plane(0, i)[p] = acc.value();
        }
        acc = 0.0;
        for (std::size_t i = center; i-- > 0;) {
          const Counted gap =
              Counted(static_cast<double>(w_pad)) + Counted(shape.plane(0, i)[p]);
          acc = acc - gap;
          offsets.plane(0, i)[p] = acc.value();
        }
      }
    }
    auto sampled = [&](std::size_t c, std::size_t i, std::size_t n,
                       std::size_t ho, std::size_t wo) {
      const TallyScope scope(m.sampling);
      const FlatView plane(x_pad.plane(b, c), w_pad);
      const auto base = flat_index(
          static_cast<std::ptrdiff_t>(ho * spec.stride + k / 2),
          static_cast<std::ptrdiff_t>(wo * spec.stride + n),
          static_cast<std::ptrdiff_t>(w_pad));
      const Counted l = Counted(static_cast<double>(base)) +
                        Counted(offsets.at(0, i, ho, wo));
      const double lo = std::floor(l.value());
      const Counted t = l - Counted(lo);
      const auto p = static_cast<std::ptrdiff_t>(lo);
      return t * Counted(plane.get(p + 1)) +
             (Counted(1.0) - t) * Counted(plane.get(p));
    };
    counted_conv(spec, h_out, w_out, kernel, bias, sampled, m.main);
  }
  return m;
}

// Serialization --------------------------------------------------------------

std::string serialize(const ModelGraph& g) {
  std::ostringstream os;
  os << "graph model=" << g.model << " variant=" << to_string(g.variant)
     << " classes=" << g.classes << " input=" << g.input.c << "x" << g.input.h
     << "x" << g.input.w << "\n";
  for (const auto& l : g.layers) {
    os << to_string(l.kind) << " name=" << l.name;
    if (l.is_conv()) {
      os << " cin=" << l.conv.in_channels << " cout=" << l.conv.out_channels
         << " k=" << l.conv.kernel << " s=" << l.conv.stride
         << " p=" << l.conv.pad() << " bias=" << (l.conv.has_bias ? 1 : 0);
    } else if (l.kind == LayerKind::maxpool || l.kind == LayerKind::avgpool) {
      os << " k=" << l.pool.kernel << " s=" << l.pool.stride
         << " p=" << l.pool.padding;
    } else if (l.kind == LayerKind::fc) {
      os << " out=" << l.features;
    }
    os << "\n";
  }
  return os.str();
}

ModelGraph parse_graph(const std::string& text) {
  ModelGraph g;
  std::istringstream is(text);
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string head;
    ls >> head;
    std::vector<std::pair<std::string, std::string>> kv;
    for (std::string tok; ls >> tok;) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) {
        throw std::invalid_argument("graph line " + std::to_string(lineno) +
                                    ": expected key=value, got '" + tok + "'");
      }
      kv.emplace_back(tok.substr(0, eq), tok.substr(eq + 1));
    }
    auto get = [&](const std::string& key) -> std::string {
      for (const auto& [k, v] : kv) {
        if (k == key) return v;
      }
      throw std::invalid_argument("graph line " + std::to_string(lineno) +
                                  ": missing '" + key + "'");
    };
    auto num = [&](const std::string& key) {
      return static_cast<std::size_t>(std::stoull(get(key)));
    };
    if (head == "graph") {
      g.model = get("model");
      g.variant = parse_variant(get("variant"));
      g.classes = num("classes");
      const std::string in = get("input");
      if (std::sscanf(in.c_str(), "%zux%zux%zu", &g.input.c, &g.input.h,
                      &g.input.w) != 3) {
        throw std::invalid_argument("graph: bad input extents '" + in + "'");
      }
      header = true;
      continue;
    }
    LayerDescriptor l;
    l.kind = parse_layer_kind(head);
    l.name = get("name");
    if (l.is_conv()) {
      l.conv = ConvSpec{num("cin"), num("cout"), num("k"), num("s"), num("p"),
                        num("bias") != 0};
    } else if (l.kind == LayerKind::maxpool || l.kind == LayerKind::avgpool) {
      l.pool = PoolSpec{num("k"), num("s"), num("p")};
    } else if (l.kind == LayerKind::fc) {
      l.features = num("out");
    }
    g.layers.push_back(l);
  }
  if (!header) throw std::invalid_argument("graph: missing header line");
  resolve(g);
  return g;
}

std::vector<AccountRow> account(const ModelGraph& g) {
  if (!g.resolved) throw UnresolvedGraphError("account: graph not resolved");
  std::vector<AccountRow> rows;
  for (const auto& l : g.layers) {
    const auto p = layer_params(l);
    if (p == 0 && !l.is_conv()) continue;
    rows.push_back({l.name, to_string(l.kind), p, count_flops(l)});
  }
  return rows;
}

}  // namespace odc
