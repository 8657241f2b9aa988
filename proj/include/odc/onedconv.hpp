#pragma once

#include <cstddef>

#include "odc/layers.hpp"
#include "odc/tensor.hpp"

namespace odc {

// A OneDConv layer treats its K x K kernel as K one-dimensional 1 x K
// filters (kernel rows). Each padded input plane is flattened; filter i is
// placed at a per-location displacement d_i along the flattened axis and
// sampled with linear interpolation. A companion "shape" convolution
// predicts the K-1 gaps between adjacent filters. With a zero shape map
// every gap equals the padded width, which is exactly an ordinary
// convolution.

/// Weights of the shape convolution: kernel (K-1, C_in, K, K), bias (K-1).
struct ShapeConvWeights : ConvWeights {
  static ShapeConvWeights zeros(const ConvSpec& main);
};

/// Geometry of the shape convolution paired with a main convolution: K-1
/// outputs, identical kernel size, stride and padding, with bias.
ConvSpec shape_conv_spec(const ConvSpec& main);

/// Gap deltas (N_b, K-1, H_out, W_out), in flattened pixels.
using ShapeMap = Tensor;
/// Per-filter displacements (N_b, K, H_out, W_out), in flattened pixels.
using OffsetField = Tensor;

/// Index of the filter pinned at displacement 0 (the middle kernel row).
constexpr std::size_t center_filter(std::size_t filters) { return filters / 2; }

/// Displacement of filter i when the filters form a square: (i - c) * W_pad.
double square_offset(std::size_t i, std::size_t filters, std::size_t w_pad);

ShapeMap shape_conv_forward(const Tensor& x, const ShapeConvWeights& sw,
                            const ConvSpec& main);

/// gap_j = w_pad + s_j; d_c = 0; d_i accumulates the gaps outward from c.
OffsetField offsets_from_shape(const ShapeMap& s, std::size_t w_pad);
/// Adjoint of offsets_from_shape: maps dL/dd to dL/ds.
ShapeMap offsets_backward(const Tensor& grad_offsets);

/// (l - floor l) * x(floor l + 1) + (floor l + 1 - l) * x(floor l), with x
/// zero outside the plane. Exact at integer l.
double linear_sample(const FlatView& plane, double l);

struct OneDConvCache {
  ConvSpec spec;
  ConvWeights wts;
  ShapeConvWeights sw;
  Tensor x;
  Tensor x_pad;
  ShapeMap shape;
  OffsetField offsets;
};

struct OneDConvResult {
  Tensor y;
  OneDConvCache cache;
};

struct OneDConvGrads {
  Tensor grad_x;
  Tensor grad_kernel;
  Tensor grad_bias;
  Tensor grad_shape_kernel;
  Tensor grad_shape_bias;
};

/// Main sampling stage for an explicit offset field; no shape convolution.
Tensor onedconv_apply(const Tensor& x, const ConvSpec& spec,
                      const ConvWeights& wts, const OffsetField& offsets);

OneDConvResult onedconv_forward(const Tensor& x, const ConvSpec& spec,
                                const ConvWeights& wts,
                                const ShapeConvWeights& sw);

OneDConvGrads onedconv_backward(const OneDConvCache& cache,
                                const Tensor& grad_y);

/// Gradients of the sampling stage alone, for a fixed offset field.
struct SamplingGrads {
  Tensor grad_x;
  Tensor grad_kernel;
  Tensor grad_bias;
  Tensor grad_offsets;
};
SamplingGrads onedconv_apply_backward(const Tensor& x, const ConvSpec& spec,
                                      const ConvWeights& wts,
                                      const OffsetField& offsets,
                                      const Tensor& grad_y);

}  // namespace odc
