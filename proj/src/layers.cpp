#include "odc/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "odc/parallel.hpp"

namespace odc {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void check_conv_inputs(const Tensor& x, const ConvSpec& spec,
                       const ConvWeights& wts) {
  spec.validate();
  if (x.shape().c != spec.in_channels) {
    throw ShapeError("conv: input has " + std::to_string(x.shape().c) +
                     " channels, layer expects " +
                     std::to_string(spec.in_channels));
  }
  const Shape ks{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
  if (wts.kernel.shape() != ks) {
    throw ShapeError("conv: kernel " + to_string(wts.kernel.shape()) +
                     " does not match spec " + to_string(ks));
  }
  if (spec.has_bias && wts.bias.shape() != vector_shape(spec.out_channels)) {
    throw ShapeError("conv: bias must have " +
                     std::to_string(spec.out_channels) + " entries");
  }
  if (x.shape().h + 2 * spec.pad() < spec.kernel ||
      x.shape().w + 2 * spec.pad() < spec.kernel) {
    throw ShapeError("conv: input " + to_string(x.shape()) +
                     " smaller than kernel");
  }
}

void im2col(const Tensor& x, std::size_t b, const ConvSpec& spec,
            std::size_t h_out, std::size_t w_out, std::span<double> cols) {
  const auto& s = x.shape();
  const std::size_t k = spec.kernel;
  const std::size_t len = h_out * w_out;
  const auto pad = static_cast<std::ptrdiff_t>(spec.pad());
  for (std::size_t c = 0; c < s.c; ++c) {
    auto plane = x.plane(b, c);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        double* row = cols.data() + ((c * k + i) * k + j) * len;
        for (std::size_t ho = 0; ho < h_out; ++ho) {
          const auto h = static_cast<std::ptrdiff_t>(ho * spec.stride + i) - pad;
          for (std::size_t wo = 0; wo < w_out; ++wo) {
            const auto w =
                static_cast<std::ptrdiff_t>(wo * spec.stride + j) - pad;
            const bool inside = h >= 0 && w >= 0 &&
                                h < static_cast<std::ptrdiff_t>(s.h) &&
                                w < static_cast<std::ptrdiff_t>(s.w);
            row[ho * w_out + wo] =
                inside ? plane[static_cast<std::size_t>(h) * s.w +
                               static_cast<std::size_t>(w)]
                       : 0.0;
          }
        }
      }
    }
  }
}

void col2im(std::span<const double> cols, const ConvSpec& spec,
            std::size_t h_out, std::size_t w_out, const Shape& s,
            std::span<double> grad_sample) {
  const std::size_t k = spec.kernel;
  const std::size_t len = h_out * w_out;
  const auto pad = static_cast<std::ptrdiff_t>(spec.pad());
  for (std::size_t c = 0; c < s.c; ++c) {
    double* plane = grad_sample.data() + c * s.plane();
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double* row = cols.data() + ((c * k + i) * k + j) * len;
        for (std::size_t ho = 0; ho < h_out; ++ho) {
          const auto h = static_cast<std::ptrdiff_t>(ho * spec.stride + i) - pad;
          if (h < 0 || h >= static_cast<std::ptrdiff_t>(s.h)) continue;
          for (std::size_t wo = 0; wo < w_out; ++wo) {
            const auto w =
                static_cast<std::ptrdiff_t>(wo * spec.stride + j) - pad;
            if (w < 0 || w >= static_cast<std::ptrdiff_t>(s.w)) continue;
            plane[static_cast<std::size_t>(h) * s.w +
                  static_cast<std::size_t>(w)] += row[ho * w_out + wo];
          }
        }
      }
    }
  }
}

}  // namespace

void ConvSpec::validate() const {
  if (kernel == 0 || kernel % 2 == 0) {
    throw std::invalid_argument("conv: kernel must be odd, got " +
                                std::to_string(kernel));
  }
  if (in_channels == 0 || out_channels == 0) {
    throw std::invalid_argument("conv: channel counts must be positive");
  }
  if (stride != 1 && stride != 2) {
    throw std::invalid_argument("conv: stride must be 1 or 2");
  }
}

ConvWeights ConvWeights::zeros(const ConvSpec& spec) {
  ConvWeights w;
  w.kernel = Tensor(
      {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel});
  if (spec.has_bias) w.bias = Tensor(vector_shape(spec.out_channels));
  return w;
}

namespace detail {

void gemm_cols_forward(const ConvWeights& wts, std::span<const double> cols,
                       std::size_t length, std::span<double> y_b) {
  const auto& ks = wts.kernel.shape();
  const auto rows = static_cast<Eigen::Index>(ks.c * ks.h * ks.w);
  const auto c_out = static_cast<Eigen::Index>(ks.n);
  const auto len = static_cast<Eigen::Index>(length);
  ConstMap kernel(wts.kernel.data().data(), c_out, rows);
  ConstMap c(cols.data(), rows, len);
  MutMap y(y_b.data(), c_out, len);
  y.noalias() = kernel * c;
  if (!wts.bias.empty()) {
    for (Eigen::Index o = 0; o < c_out; ++o) {
      y.row(o).array() += wts.bias[static_cast<std::size_t>(o)];
    }
  }
}

void gemm_cols_backward(const ConvWeights& wts, std::span<const double> cols,
                        std::span<const double> grad_y_b, std::size_t length,
                        std::span<double> grad_kernel,
                        std::span<double> grad_cols) {
  const auto& ks = wts.kernel.shape();
  const auto rows = static_cast<Eigen::Index>(ks.c * ks.h * ks.w);
  const auto c_out = static_cast<Eigen::Index>(ks.n);
  const auto len = static_cast<Eigen::Index>(length);
  ConstMap kernel(wts.kernel.data().data(), c_out, rows);
  ConstMap c(cols.data(), rows, len);
  ConstMap g(grad_y_b.data(), c_out, len);
  MutMap gk(grad_kernel.data(), c_out, rows);
  gk.noalias() += g * c.transpose();
  MutMap gc(grad_cols.data(), rows, len);
  gc.noalias() = kernel.transpose() * g;
}

}  // namespace detail

Tensor conv2d_forward(const Tensor& x, const ConvSpec& spec,
                      const ConvWeights& wts) {
  check_conv_inputs(x, spec, wts);
  const auto& s = x.shape();
  const std::size_t h_out = spec.out_extent(s.h);
  const std::size_t w_out = spec.out_extent(s.w);
  const std::size_t len = h_out * w_out;
  const std::size_t rows = spec.in_channels * spec.kernel * spec.kernel;
  Tensor y({s.n, spec.out_channels, h_out, w_out});
  parallel_chunks(s.n, [&](std::size_t, std::size_t b0, std::size_t b1) {
    std::vector<double> cols(rows * len);
    for (std::size_t b = b0; b < b1; ++b) {
      im2col(x, b, spec, h_out, w_out, cols);
      detail::gemm_cols_forward(wts, cols, len, y.sample(b));
    }
  });
  return y;
}

ConvGrads conv2d_backward(const Tensor& x, const ConvSpec& spec,
                          const ConvWeights& wts, const Tensor& grad_y) {
  check_conv_inputs(x, spec, wts);
  const auto& s = x.shape();
  const std::size_t h_out = spec.out_extent(s.h);
  const std::size_t w_out = spec.out_extent(s.w);
  const Shape ys{s.n, spec.out_channels, h_out, w_out};
  if (grad_y.shape() != ys) {
    throw ShapeError("conv2d_backward: grad_y " + to_string(grad_y.shape()) +
                     " but forward output is " + to_string(ys));
  }
  const std::size_t len = h_out * w_out;
  const std::size_t rows = spec.in_channels * spec.kernel * spec.kernel;

  ConvGrads g;
  g.grad_x = Tensor(s);
  g.grad_kernel = Tensor(wts.kernel.shape());
  std::vector<Tensor> partial(chunk_count(s.n), Tensor(wts.kernel.shape()));
  parallel_chunks(s.n, [&](std::size_t chunk, std::size_t b0, std::size_t b1) {
    std::vector<double> cols(rows * len);
    std::vector<double> grad_cols(rows * len);
    for (std::size_t b = b0; b < b1; ++b) {
      im2col(x, b, spec, h_out, w_out, cols);
      detail::gemm_cols_backward(wts, cols, grad_y.sample(b), len,
                                 partial[chunk].data(), grad_cols);
      col2im(grad_cols, spec, h_out, w_out, s, g.grad_x.sample(b));
    }
  });
  for (const auto& p : partial) add_into(g.grad_kernel, p);

  if (spec.has_bias) {
    g.grad_bias = Tensor(vector_shape(spec.out_channels));
    for (std::size_t b = 0; b < s.n; ++b) {
      for (std::size_t o = 0; o < spec.out_channels; ++o) {
        double acc = 0.0;
        for (double v : grad_y.plane(b, o)) acc += v;
        g.grad_bias[o] += acc;
      }
    }
  }
  return g;
}

Tensor pad_planes(const Tensor& x, std::size_t pad) {
  const auto& s = x.shape();
  Tensor out({s.n, s.c, s.h + 2 * pad, s.w + 2 * pad});
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t h = 0; h < s.h; ++h) {
        for (std::size_t w = 0; w < s.w; ++w) {
          out.at(b, c, h + pad, w + pad) = x.at(b, c, h, w);
        }
      }
    }
  }
  return out;
}

Tensor crop_planes(const Tensor& x, std::size_t pad) {
  const auto& s = x.shape();
  if (s.h < 2 * pad || s.w < 2 * pad) {
    throw ShapeError("crop_planes: border larger than plane");
  }
  Tensor out({s.n, s.c, s.h - 2 * pad, s.w - 2 * pad});
  const auto& o = out.shape();
  for (std::size_t b = 0; b < o.n; ++b) {
    for (std::size_t c = 0; c < o.c; ++c) {
      for (std::size_t h = 0; h < o.h; ++h) {
        for (std::size_t w = 0; w < o.w; ++w) {
          out.at(b, c, h, w) = x.at(b, c, h + pad, w + pad);
        }
      }
    }
  }
  return out;
}

// Batch normalization ------------------------------------------------------

BatchNormParams::BatchNormParams(std::size_t channels)
    : gamma(vector_shape(channels), 1.0),
      beta(vector_shape(channels), 0.0),
      running_mean(vector_shape(channels), 0.0),
      running_var(vector_shape(channels), 1.0) {}

Tensor batchnorm_forward(const Tensor& x, BatchNormParams& p, bool training,
                         BatchNormCache* cache) {
  const auto& s = x.shape();
  if (s.c != p.channels()) {
    throw ShapeError("batchnorm: input has " + std::to_string(s.c) +
                     " channels, parameters have " +
                     std::to_string(p.channels()));
  }
  const std::size_t count = s.n * s.plane();
  if (training && count == 0) {
    throw ShapeError("batchnorm: empty batch in training mode");
  }
  Tensor y(s);
  Tensor x_hat(s);
  std::vector<double> inv_std(s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    double mean = p.running_mean[c];
    double var = p.running_var[c];
    if (training) {
      double acc = 0.0;
      for (std::size_t b = 0; b < s.n; ++b) {
        for (double v : x.plane(b, c)) acc += v;
      }
      mean = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < s.n; ++b) {
        for (double v : x.plane(b, c)) sq += (v - mean) * (v - mean);
      }
      var = sq / static_cast<double>(count);
      const double unbiased =
          count > 1 ? sq / static_cast<double>(count - 1) : var;
      p.running_mean[c] = (1.0 - p.momentum) * p.running_mean[c] +
                          p.momentum * mean;
      p.running_var[c] =
          (1.0 - p.momentum) * p.running_var[c] + p.momentum * unbiased;
    }
    inv_std[c] = 1.0 / std::sqrt(var + p.eps);
    for (std::size_t b = 0; b < s.n; ++b) {
      auto src = x.plane(b, c);
      auto xh = x_hat.plane(b, c);
      auto dst = y.plane(b, c);
      for (std::size_t i = 0; i < src.size(); ++i) {
        xh[i] = (src[i] - mean) * inv_std[c];
        dst[i] = p.gamma[c] * xh[i] + p.beta[c];
      }
    }
  }
  if (cache != nullptr) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
    cache->training = training;
  }
  return y;
}

BatchNormGrads batchnorm_backward(const BatchNormParams& p,
                                  const BatchNormCache& cache,
                                  const Tensor& grad_y) {
  const auto& s = grad_y.shape();
  if (s != cache.x_hat.shape()) {
    throw ShapeError("batchnorm_backward: grad_y " + to_string(s) +
                     " does not match cached input " +
                     to_string(cache.x_hat.shape()));
  }
  BatchNormGrads g;
  g.grad_x = Tensor(s);
  g.grad_gamma = Tensor(vector_shape(s.c));
  g.grad_beta = Tensor(vector_shape(s.c));
  const auto count = static_cast<double>(s.n * s.plane());
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t b = 0; b < s.n; ++b) {
      auto gy = grad_y.plane(b, c);
      auto xh = cache.x_hat.plane(b, c);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        sum_g += gy[i];
        sum_gx += gy[i] * xh[i];
      }
    }
    g.grad_gamma[c] = sum_gx;
    g.grad_beta[c] = sum_g;
    const double k = p.gamma[c] * cache.inv_std[c];
    for (std::size_t b = 0; b < s.n; ++b) {
      auto gy = grad_y.plane(b, c);
      auto xh = cache.x_hat.plane(b, c);
      auto gx = g.grad_x.plane(b, c);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        gx[i] = cache.training
                    ? k * (gy[i] - sum_g / count - xh[i] * sum_gx / count)
                    : k * gy[i];
      }
    }
  }
  return g;
}

// Pooling ------------------------------------------------------------------

Tensor maxpool_forward(const Tensor& x, const PoolSpec& spec,
                       MaxPoolCache* cache) {
  const auto& s = x.shape();
  if (s.h + 2 * spec.padding < spec.kernel ||
      s.w + 2 * spec.padding < spec.kernel) {
    throw ShapeError("maxpool: input " + to_string(s) + " smaller than window");
  }
  const std::size_t h_out = spec.out_extent(s.h);
  const std::size_t w_out = spec.out_extent(s.w);
  Tensor y({s.n, s.c, h_out, w_out});
  std::vector<std::size_t> argmax(y.size());
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t ho = 0; ho < h_out; ++ho) {
        for (std::size_t wo = 0; wo < w_out; ++wo) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t i = 0; i < spec.kernel; ++i) {
            const auto h = static_cast<std::ptrdiff_t>(ho * spec.stride + i) - pad;
            if (h < 0 || h >= static_cast<std::ptrdiff_t>(s.h)) continue;
            for (std::size_t j = 0; j < spec.kernel; ++j) {
              const auto w =
                  static_cast<std::ptrdiff_t>(wo * spec.stride + j) - pad;
              if (w < 0 || w >= static_cast<std::ptrdiff_t>(s.w)) continue;
              const std::size_t idx = x.index(b, c, static_cast<std::size_t>(h),
                                              static_cast<std::size_t>(w));
              if (x[idx] > best || std::isnan(x[idx])) {
                best = x[idx];
                best_idx = idx;
              }
            }
          }
          const std::size_t out = y.index(b, c, ho, wo);
          y[out] = best;
          argmax[out] = best_idx;
        }
      }
    }
  }
  if (cache != nullptr) {
    cache->input = s;
    cache->argmax = std::move(argmax);
  }
  return y;
}

Tensor maxpool_backward(const MaxPoolCache& cache, const Tensor& grad_y) {
  if (grad_y.size() != cache.argmax.size()) {
    throw ShapeError("maxpool_backward: grad_y does not match forward output");
  }
  Tensor gx(cache.input);
  for (std::size_t i = 0; i < grad_y.size(); ++i) {
    gx[cache.argmax[i]] += grad_y[i];
  }
  return gx;
}

Tensor avgpool_forward(const Tensor& x, const PoolSpec& spec) {
  const auto& s = x.shape();
  if (s.h + 2 * spec.padding < spec.kernel ||
      s.w + 2 * spec.padding < spec.kernel) {
    throw ShapeError("avgpool: input " + to_string(s) + " smaller than window");
  }
  const std::size_t h_out = spec.out_extent(s.h);
  const std::size_t w_out = spec.out_extent(s.w);
  const double inv = 1.0 / static_cast<double>(spec.kernel * spec.kernel);
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);
  Tensor y({s.n, s.c, h_out, w_out});
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t ho = 0; ho < h_out; ++ho) {
        for (std::size_t wo = 0; wo < w_out; ++wo) {
          double acc = 0.0;
          for (std::size_t i = 0; i < spec.kernel; ++i) {
            const auto h = static_cast<std::ptrdiff_t>(ho * spec.stride + i) - pad;
            if (h < 0 || h >= static_cast<std::ptrdiff_t>(s.h)) continue;
            for (std::size_t j = 0; j < spec.kernel; ++j) {
              const auto w =
                  static_cast<std::ptrdiff_t>(wo * spec.stride + j) - pad;
              if (w < 0 || w >= static_cast<std::ptrdiff_t>(s.w)) continue;
              acc += x.at(b, c, static_cast<std::size_t>(h),
                          static_cast<std::size_t>(w));
            }
          }
          y.at(b, c, ho, wo) = acc * inv;
        }
      }
    }
  }
  return y;
}

Tensor avgpool_backward(const Shape& input, const PoolSpec& spec,
                        const Tensor& grad_y) {
  const std::size_t h_out = spec.out_extent(input.h);
  const std::size_t w_out = spec.out_extent(input.w);
  if (grad_y.shape() != Shape{input.n, input.c, h_out, w_out}) {
    throw ShapeError("avgpool_backward: grad_y " + to_string(grad_y.shape()) +
                     " does not match forward output");
  }
  const double inv = 1.0 / static_cast<double>(spec.kernel * spec.kernel);
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);
  Tensor gx(input);
  for (std::size_t b = 0; b < input.n; ++b) {
    for (std::size_t c = 0; c < input.c; ++c) {
      for (std::size_t ho = 0; ho < h_out; ++ho) {
        for (std::size_t wo = 0; wo < w_out; ++wo) {
          const double g = grad_y.at(b, c, ho, wo) * inv;
          for (std::size_t i = 0; i < spec.kernel; ++i) {
            const auto h = static_cast<std::ptrdiff_t>(ho * spec.stride + i) - pad;
            if (h < 0 || h >= static_cast<std::ptrdiff_t>(input.h)) continue;
            for (std::size_t j = 0; j < spec.kernel; ++j) {
              const auto w =
                  static_cast<std::ptrdiff_t>(wo * spec.stride + j) - pad;
              if (w < 0 || w >= static_cast<std::ptrdiff_t>(input.w)) continue;
              gx.at(b, c, static_cast<std::size_t>(h),
                    static_cast<std::size_t>(w)) += g;
            }
          }
        }
      }
    }
  }
  return gx;
}

// Fully connected ----------------------------------------------------------

namespace {
void check_fc(const Tensor& x, const FcWeights& wts) {
  const std::size_t in = x.shape().c * x.shape().plane();
  if (in != wts.in()) {
    throw ShapeError("fc: input has " + std::to_string(in) +
                     " features, weight expects " + std::to_string(wts.in()));
  }
  if (wts.bias.shape() != vector_shape(wts.out())) {
    throw ShapeError("fc: bias must have " + std::to_string(wts.out()) +
                     " entries");
  }
}
}  // namespace

Tensor fc_forward(const Tensor& x, const FcWeights& wts) {
  check_fc(x, wts);
  const auto n = static_cast<Eigen::Index>(x.shape().n);
  const auto in = static_cast<Eigen::Index>(wts.in());
  const auto out = static_cast<Eigen::Index>(wts.out());
  Tensor y({x.shape().n, wts.out(), 1, 1});
  ConstMap xm(x.data().data(), n, in);
  ConstMap wm(wts.weight.data().data(), out, in);
  MutMap ym(y.data().data(), n, out);
  ym.noalias() = xm * wm.transpose();
  for (Eigen::Index b = 0; b < n; ++b) {
    for (Eigen::Index o = 0; o < out; ++o) {
      ym(b, o) += wts.bias[static_cast<std::size_t>(o)];
    }
  }
  return y;
}

FcGrads fc_backward(const Tensor& x, const FcWeights& wts,
                    const Tensor& grad_y) {
  check_fc(x, wts);
  if (grad_y.shape() != Shape{x.shape().n, wts.out(), 1, 1}) {
    throw ShapeError("fc_backward: grad_y " + to_string(grad_y.shape()) +
                     " does not match forward output");
  }
  const auto n = static_cast<Eigen::Index>(x.shape().n);
  const auto in = static_cast<Eigen::Index>(wts.in());
  const auto out = static_cast<Eigen::Index>(wts.out());
  FcGrads g;
  g.grad_x = Tensor(x.shape());
  g.grad_weight = Tensor(wts.weight.shape());
  g.grad_bias = Tensor(wts.bias.shape());
  ConstMap xm(x.data().data(), n, in);
  ConstMap wm(wts.weight.data().data(), out, in);
  ConstMap gy(grad_y.data().data(), n, out);
  MutMap(g.grad_x.data().data(), n, in).noalias() = gy * wm;
  MutMap(g.grad_weight.data().data(), out, in).noalias() = gy.transpose() * xm;
  for (Eigen::Index b = 0; b < n; ++b) {
    for (Eigen::Index o = 0; o < out; ++o) {
      g.grad_bias[static_cast<std::size_t>(o)] += gy(b, o);
    }
  }
  return g;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_y) {
  if (x.shape() != grad_y.shape()) {
    throw ShapeError("relu_backward: shape mismatch");
  }
  Tensor gx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    gx[i] = x[i] > 0.0 ? grad_y[i] : 0.0;
  }
  return gx;
}

// Loss ---------------------------------------------------------------------

LossResult softmax_cross_entropy(const Tensor& logits,
                                 std::span<const int> labels) {
  const auto& s = logits.shape();
  const std::size_t classes = s.c * s.plane();
  if (labels.size() != s.n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for a batch of " + std::to_string(s.n));
  }
  LossResult r;
  r.grad_logits = Tensor(s);
  if (s.n == 0) return r;
  const double inv_n = 1.0 / static_cast<double>(s.n);
  for (std::size_t b = 0; b < s.n; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw std::out_of_range("softmax_cross_entropy: label " +
                              std::to_string(label) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
    auto z = logits.sample(b);
    auto g = r.grad_logits.sample(b);
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (double v : z) denom += std::exp(v - zmax);
    const double log_denom = std::log(denom);
    r.loss += (log_denom - (z[static_cast<std::size_t>(label)] - zmax)) * inv_n;
    for (std::size_t k = 0; k < classes; ++k) {
      const double p = std::exp(z[k] - zmax - log_denom);
      g[k] = (p - (static_cast<int>(k) == label ? 1.0 : 0.0)) * inv_n;
    }
  }
  return r;
}

// Optimizer ----------------------------------------------------------------

void sgd_step(std::span<Tensor* const> params,
              std::span<const Tensor* const> grads, SgdState& state) {
  if (params.size() != grads.size()) {
    throw ShapeError("sgd_step: " + std::to_string(params.size()) +
                     " parameters but " + std::to_string(grads.size()) +
                     " gradients");
  }
  if (state.velocity.empty()) {
    for (const Tensor* p : params) state.velocity.emplace_back(p->shape());
  }
  if (state.velocity.size() != params.size()) {
    throw ShapeError("sgd_step: velocity buffers do not match parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = *grads[k];
    Tensor& v = state.velocity[k];
    if (p.shape() != g.shape() || p.shape() != v.shape()) {
      throw ShapeError("sgd_step: parameter " + std::to_string(k) +
                       " shape mismatch");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double eff = g[i] + state.weight_decay * p[i];
      v[i] = state.momentum * v[i] + eff;
      p[i] -= state.learning_rate * v[i];
    }
  }
}

}  // namespace odc
