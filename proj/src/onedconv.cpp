#include "odc/onedconv.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "odc/parallel.hpp"

namespace odc {

namespace {

struct Geometry {
  std::size_t k = 0;
  std::size_t half = 0;
  std::size_t stride = 1;
  std::size_t h_out = 0;
  std::size_t w_out = 0;
  std::size_t len = 0;
  std::size_t w_pad = 0;
  std::size_t rows = 0;

  Geometry(const ConvSpec& spec, const Shape& in)
      : k(spec.kernel),
        half(spec.kernel / 2),
        stride(spec.stride),
        h_out(spec.out_extent(in.h)),
        w_out(spec.out_extent(in.w)),
        len(h_out * w_out),
        w_pad(in.w + 2 * spec.pad()),
        rows(in.c * spec.kernel * spec.kernel) {}

  /// Flattened padded position of the window centre for output location.
  std::ptrdiff_t base(std::size_t ho, std::size_t wo) const {
    return flat_index(static_cast<std::ptrdiff_t>(ho * stride + half),
                      static_cast<std::ptrdiff_t>(wo * stride + half),
                      static_cast<std::ptrdiff_t>(w_pad));
  }
};

void check_offsets(const OffsetField& offsets, const Shape& x,
                   const Geometry& g) {
  const Shape want{x.n, g.k, g.h_out, g.w_out};
  if (offsets.shape() != want) {
    throw ShapeError("onedconv: offset field " + to_string(offsets.shape()) +
                     ", expected " + to_string(want));
  }
}

void check_main(const Tensor& x, const ConvSpec& spec, const ConvWeights& wts) {
  spec.validate();
  if (x.shape().c != spec.in_channels) {
    throw ShapeError("onedconv: input has " + std::to_string(x.shape().c) +
                     " channels, layer expects " +
                     std::to_string(spec.in_channels));
  }
  const Shape ks{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
  if (wts.kernel.shape() != ks) {
    throw ShapeError("onedconv: kernel " + to_string(wts.kernel.shape()) +
                     " does not match spec " + to_string(ks));
  }
  if (spec.has_bias && wts.bias.shape() != vector_shape(spec.out_channels)) {
    throw ShapeError("onedconv: bias must have " +
                     std::to_string(spec.out_channels) + " entries");
  }
}

/// Fills the (C_in*K*K) x L column matrix of interpolated samples for sample b.
void sample_columns(const Tensor& x_pad, std::size_t b,
                    const OffsetField& offsets, const Geometry& g,
                    std::span<double> cols) {
  const std::size_t channels = x_pad.shape().c;
  for (std::size_t c = 0; c < channels; ++c) {
    const FlatView plane(x_pad.plane(b, c), g.w_pad);
    for (std::size_t i = 0; i < g.k; ++i) {
      auto d = offsets.plane(b, i);
      for (std::size_t n = 0; n < g.k; ++n) {
        double* row = cols.data() + ((c * g.k + i) * g.k + n) * g.len;
        const auto tap = static_cast<std::ptrdiff_t>(n) -
                         static_cast<std::ptrdiff_t>(g.half);
        for (std::size_t ho = 0; ho < g.h_out; ++ho) {
          for (std::size_t wo = 0; wo < g.w_out; ++wo) {
            const std::size_t l0 = ho * g.w_out + wo;
            const double l =
                static_cast<double>(g.base(ho, wo) + tap) + d[l0];
            row[l0] = linear_sample(plane, l);
          }
        }
      }
    }
  }
}

/// Scatters column gradients back to the padded input plane and to the
/// offsets of sample b.
void scatter_columns(const Tensor& x_pad, std::size_t b,
                     const OffsetField& offsets, const Geometry& g,
                     std::span<const double> grad_cols,
                     std::span<double> grad_x_pad_b,
                     std::span<double> grad_offsets_b) {
  const std::size_t channels = x_pad.shape().c;
  const std::size_t plane_len = x_pad.shape().plane();
  const auto limit = static_cast<std::ptrdiff_t>(plane_len);
  for (std::size_t c = 0; c < channels; ++c) {
    const FlatView plane(x_pad.plane(b, c), g.w_pad);
    double* gx = grad_x_pad_b.data() + c * plane_len;
    for (std::size_t i = 0; i < g.k; ++i) {
      auto d = offsets.plane(b, i);
      double* gd = grad_offsets_b.data() + i * g.len;
      for (std::size_t n = 0; n < g.k; ++n) {
        const double* row = grad_cols.data() + ((c * g.k + i) * g.k + n) * g.len;
        const auto tap = static_cast<std::ptrdiff_t>(n) -
                         static_cast<std::ptrdiff_t>(g.half);
        for (std::size_t ho = 0; ho < g.h_out; ++ho) {
          for (std::size_t wo = 0; wo < g.w_out; ++wo) {
            const std::size_t l0 = ho * g.w_out + wo;
            const double gv = row[l0];
            const double l =
                static_cast<double>(g.base(ho, wo) + tap) + d[l0];
            if (!std::isfinite(l) || l <= -1.0 ||
                l >= static_cast<double>(plane_len)) {
              continue;
            }
            const double lo = std::floor(l);
            const double t = l - lo;
            const auto p = static_cast<std::ptrdiff_t>(lo);
            // Right-derivative convention at integer l: the cell is [p, p+1].
            gd[l0] += gv * (plane.get(p + 1) - plane.get(p));
            if (p >= 0) gx[p] += (1.0 - t) * gv;
            if (p + 1 < limit) gx[p + 1] += t * gv;
          }
        }
      }
    }
  }
}

}  // namespace

ShapeConvWeights ShapeConvWeights::zeros(const ConvSpec& main) {
  ShapeConvWeights sw;
  static_cast<ConvWeights&>(sw) = ConvWeights::zeros(shape_conv_spec(main));
  return sw;
}

ConvSpec shape_conv_spec(const ConvSpec& main) {
  ConvSpec s = main;
  s.out_channels = main.kernel - 1;
  s.padding = main.pad();
  s.has_bias = true;
  return s;
}

double square_offset(std::size_t i, std::size_t filters, std::size_t w_pad) {
  return (static_cast<double>(i) -
          static_cast<double>(center_filter(filters))) *
         static_cast<double>(w_pad);
}

ShapeMap shape_conv_forward(const Tensor& x, const ShapeConvWeights& sw,
                            const ConvSpec& main) {
  return conv2d_forward(x, shape_conv_spec(main), sw);
}

OffsetField offsets_from_shape(const ShapeMap& s, std::size_t w_pad) {
  const auto& ss = s.shape();
  const std::size_t filters = ss.c + 1;
  const std::size_t center = center_filter(filters);
  const auto gap_base = static_cast<double>(w_pad);
  OffsetField d({ss.n, filters, ss.h, ss.w});
  for (std::size_t b = 0; b < ss.n; ++b) {
    for (std::size_t p = 0; p < ss.plane(); ++p) {
      auto gap = [&](std::size_t j) { return gap_base + s.plane(b, j)[p]; };
      double acc = 0.0;
      for (std::size_t i = center + 1; i < filters; ++i) {
        acc += gap(i - 1);
        d.plane(b, i)[p] = acc;
      }
      acc = 0.0;
      for (std::size_t i = center; i-- > 0;) {
        acc -= gap(i);
        d.plane(b, i)[p] = acc;
      }
    }
  }
  return d;
}

ShapeMap offsets_backward(const Tensor& grad_offsets) {
  const auto& gs = grad_offsets.shape();
  if (gs.c == 0) throw ShapeError("offsets_backward: no filters");
  const std::size_t filters = gs.c;
  const std::size_t center = center_filter(filters);
  ShapeMap gsh({gs.n, filters - 1, gs.h, gs.w});
  for (std::size_t b = 0; b < gs.n; ++b) {
    for (std::size_t p = 0; p < gs.plane(); ++p) {
      // gap j >= c feeds every d_i with i > j; gap j < c feeds d_i, i <= j,
      // with a negative sign.
      double acc = 0.0;
      for (std::size_t j = filters - 1; j-- > center;) {
        acc += grad_offsets.plane(b, j + 1)[p];
        gsh.plane(b, j)[p] = acc;
      }
      acc = 0.0;
      for (std::size_t j = 0; j < center; ++j) {
        acc -= grad_offsets.plane(b, j)[p];
        gsh.plane(b, j)[p] = acc;
      }
    }
  }
  return gsh;
}

double linear_sample(const FlatView& plane, double l) {
  if (!std::isfinite(l) || l <= -1.0 ||
      l >= static_cast<double>(plane.size())) {
    return 0.0;
  }
  const double lo = std::floor(l);
  const double t = l - lo;
  const auto p = static_cast<std::ptrdiff_t>(lo);
  return t * plane.get(p + 1) + (1.0 - t) * plane.get(p);
}

Tensor onedconv_apply(const Tensor& x, const ConvSpec& spec,
                      const ConvWeights& wts, const OffsetField& offsets) {
  check_main(x, spec, wts);
  const Geometry g(spec, x.shape());
  check_offsets(offsets, x.shape(), g);
  const Tensor x_pad = pad_planes(x, spec.pad());
  Tensor y({x.shape().n, spec.out_channels, g.h_out, g.w_out});
  parallel_chunks(x.shape().n, [&](std::size_t, std::size_t b0, std::size_t b1) {
    std::vector<double> cols(g.rows * g.len);
    for (std::size_t b = b0; b < b1; ++b) {
      sample_columns(x_pad, b, offsets, g, cols);
      detail::gemm_cols_forward(wts, cols, g.len, y.sample(b));
    }
  });
  return y;
}

SamplingGrads onedconv_apply_backward(const Tensor& x, const ConvSpec& spec,
                                      const ConvWeights& wts,
                                      const OffsetField& offsets,
                                      const Tensor& grad_y) {
  check_main(x, spec, wts);
  const Geometry g(spec, x.shape());
  check_offsets(offsets, x.shape(), g);
  const Shape ys{x.shape().n, spec.out_channels, g.h_out, g.w_out};
  if (grad_y.shape() != ys) {
    throw ShapeError("onedconv_backward: grad_y " + to_string(grad_y.shape()) +
                     " but forward output is " + to_string(ys));
  }
  const Tensor x_pad = pad_planes(x, spec.pad());
  const std::size_t n = x.shape().n;

  SamplingGrads out;
  Tensor grad_x_pad(x_pad.shape());
  out.grad_offsets = Tensor(offsets.shape());
  out.grad_kernel = Tensor(wts.kernel.shape());
  std::vector<Tensor> partial(chunk_count(n), Tensor(wts.kernel.shape()));
  parallel_chunks(n, [&](std::size_t chunk, std::size_t b0, std::size_t b1) {
    std::vector<double> cols(g.rows * g.len);
    std::vector<double> grad_cols(g.rows * g.len);
    for (std::size_t b = b0; b < b1; ++b) {
      sample_columns(x_pad, b, offsets, g, cols);
      detail::gemm_cols_backward(wts, cols, grad_y.sample(b), g.len,
                                 partial[chunk].data(), grad_cols);
      scatter_columns(x_pad, b, offsets, g, grad_cols, grad_x_pad.sample(b),
                      out.grad_offsets.sample(b));
    }
  });
  for (const auto& p : partial) add_into(out.grad_kernel, p);
  out.grad_x = crop_planes(grad_x_pad, spec.pad());

  if (spec.has_bias) {
    out.grad_bias = Tensor(vector_shape(spec.out_channels));
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t o = 0; o < spec.out_channels; ++o) {
        double acc = 0.0;
        for (double v : grad_y.plane(b, o)) acc += v;
        out.grad_bias[o] += acc;
      }
    }
  }
  return out;
}

OneDConvResult onedconv_forward(const Tensor& x, const ConvSpec& spec,
                                const ConvWeights& wts,
                                const ShapeConvWeights& sw) {
  check_main(x, spec, wts);
  OneDConvResult r;
  auto& cache = r.cache;
  cache.spec = spec;
  cache.wts = wts;
  cache.sw = sw;
  cache.x = x;
  cache.x_pad = pad_planes(x, spec.pad());
  cache.shape = shape_conv_forward(x, sw, spec);
  cache.offsets = offsets_from_shape(cache.shape, cache.x_pad.shape().w);

  const Geometry g(spec, x.shape());
  r.y = Tensor({x.shape().n, spec.out_channels, g.h_out, g.w_out});
  parallel_chunks(x.shape().n, [&](std::size_t, std::size_t b0, std::size_t b1) {
    std::vector<double> cols(g.rows * g.len);
    for (std::size_t b = b0; b < b1; ++b) {
      sample_columns(cache.x_pad, b, cache.offsets, g, cols);
      detail::gemm_cols_forward(wts, cols, g.len, r.y.sample(b));
    }
  });
  return r;
}

OneDConvGrads onedconv_backward(const OneDConvCache& cache,
                                const Tensor& grad_y) {
  SamplingGrads sg = onedconv_apply_backward(cache.x, cache.spec, cache.wts,
                                             cache.offsets, grad_y);
  const ShapeMap grad_shape = offsets_backward(sg.grad_offsets);
  ConvGrads shape_grads =
      conv2d_backward(cache.x, shape_conv_spec(cache.spec), cache.sw, grad_shape);

  OneDConvGrads g;
  g.grad_x = std::move(sg.grad_x);
  add_into(g.grad_x, shape_grads.grad_x);
  g.grad_kernel = std::move(sg.grad_kernel);
  g.grad_bias = std::move(sg.grad_bias);
  g.grad_shape_kernel = std::move(shape_grads.grad_kernel);
  g.grad_shape_bias = std::move(shape_grads.grad_bias);
  return g;
}

}  // namespace odc
