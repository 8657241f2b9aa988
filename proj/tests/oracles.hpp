#pragma once

// Straight-line reference implementations used only by the tests. They share
// no code with the library beyond the Tensor container.

#include <cmath>
#include <cstddef>
#include <vector>

#include "odc/layers.hpp"
#include "odc/tensor.hpp"

namespace oracle {

using odc::ConvSpec;
using odc::ConvWeights;
using odc::Tensor;

inline Tensor conv(const Tensor& x, const ConvSpec& s, const ConvWeights& w) {
  const auto& xs = x.shape();
  const std::size_t ho = (xs.h + 2 * s.pad() - s.kernel) / s.stride + 1;
  const std::size_t wo = (xs.w + 2 * s.pad() - s.kernel) / s.stride + 1;
  Tensor y({xs.n, s.out_channels, ho, wo});
  const auto pad = static_cast<long>(s.pad());
  for (std::size_t b = 0; b < xs.n; ++b)
    for (std::size_t o = 0; o < s.out_channels; ++o)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double acc = w.bias.empty() ? 0.0 : w.bias[o];
          for (std::size_t c = 0; c < xs.c; ++c)
            for (std::size_t u = 0; u < s.kernel; ++u)
              for (std::size_t v = 0; v < s.kernel; ++v) {
                const long h = static_cast<long>(i * s.stride + u) - pad;
                const long ww = static_cast<long>(j * s.stride + v) - pad;
                if (h < 0 || ww < 0 || h >= static_cast<long>(xs.h) ||
                    ww >= static_cast<long>(xs.w))
                  continue;
                acc += w.kernel.at(o, c, u, v) *
                       x.at(b, c, static_cast<std::size_t>(h),
                            static_cast<std::size_t>(ww));
              }
          y.at(b, o, i, j) = acc;
        }
  return y;
}

// Linear interpolation as a sum of hat functions over every integer
// position of the plane: sum_p x[p] * max(0, 1 - |l - p|).
inline double hat_sample(const std::vector<double>& plane, double l) {
  double acc = 0.0;
  for (std::size_t p = 0; p < plane.size(); ++p) {
    const double wgt = 1.0 - std::abs(l - static_cast<double>(p));
    if (wgt > 0.0) acc += wgt * plane[p];
  }
  return acc;
}

// Filter displacements from K-1 gaps: the middle filter sits at 0, the
// others at the signed sum of the gaps between them and the middle.
inline std::vector<double> displacements(const std::vector<double>& gaps) {
  const std::size_t k = gaps.size() + 1;
  const std::size_t mid = k / 2;
  std::vector<double> d(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    double acc = 0.0;
    if (i > mid)
      for (std::size_t j = mid; j < i; ++j) acc += gaps[j];
    if (i < mid)
      for (std::size_t j = i; j < mid; ++j) acc -= gaps[j];
    d[i] = acc;
  }
  return d;
}

// Term-by-term OneDConv: every output is bias plus, for each input channel,
// filter row i and tap n, the kernel weight times the padded flattened
// input sampled at base + (n - K/2) + d_i. `shape` holds the gap deltas at
// every output location, (N, K-1, H_out, W_out).
inline Tensor onedconv(const Tensor& x, const ConvSpec& s, const ConvWeights& w,
                       const Tensor& shape) {
  const auto& xs = x.shape();
  const std::size_t k = s.kernel, p = s.pad();
  const std::size_t hp = xs.h + 2 * p, wp = xs.w + 2 * p;
  const std::size_t ho = (hp - k) / s.stride + 1;
  const std::size_t wo = (wp - k) / s.stride + 1;
  Tensor y({xs.n, s.out_channels, ho, wo});
  for (std::size_t b = 0; b < xs.n; ++b) {
    std::vector<std::vector<double>> planes(xs.c, std::vector<double>(hp * wp, 0.0));
    for (std::size_t c = 0; c < xs.c; ++c)
      for (std::size_t h = 0; h < xs.h; ++h)
        for (std::size_t ww = 0; ww < xs.w; ++ww)
          planes[c][(h + p) * wp + ww + p] = x.at(b, c, h, ww);
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        std::vector<double> gaps(k - 1);
        for (std::size_t g = 0; g + 1 < k; ++g)
          gaps[g] = static_cast<double>(wp) + shape.at(b, g, i, j);
        const auto d = displacements(gaps);
        const double base = static_cast<double>((i * s.stride + k / 2) * wp +
                                                j * s.stride + k / 2);
        for (std::size_t o = 0; o < s.out_channels; ++o) {
          double acc = w.bias.empty() ? 0.0 : w.bias[o];
          for (std::size_t c = 0; c < xs.c; ++c)
            for (std::size_t r = 0; r < k; ++r)
              for (std::size_t n = 0; n < k; ++n) {
                const double l = base + static_cast<double>(n) -
                                 static_cast<double>(k / 2) + d[r];
                acc += w.kernel.at(o, c, r, n) * hat_sample(planes[c], l);
              }
          y.at(b, o, i, j) = acc;
        }
      }
  }
  return y;
}

}  // namespace oracle
