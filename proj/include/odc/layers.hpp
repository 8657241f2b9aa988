#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "odc/tensor.hpp"

namespace odc {

/// Geometry of one square-kernel convolution.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  /// Defaults to kernel / 2 ("same" at stride 1).
  std::optional<std::size_t> padding;
  bool has_bias = true;

  std::size_t pad() const { return padding.value_or(kernel / 2); }
  std::size_t out_extent(std::size_t in) const {
    return (in + 2 * pad() - kernel) / stride + 1;
  }
  /// Throws std::invalid_argument on an even/zero kernel, zero channels or
  /// an unsupported stride.
  void validate() const;
};

struct ConvWeights {
  Tensor kernel;  // (C_out, C_in, K, K)
  Tensor bias;    // (1, 1, 1, C_out), empty when has_bias is false

  static ConvWeights zeros(const ConvSpec& spec);
};

struct ConvGrads {
  Tensor grad_x;
  Tensor grad_kernel;
  Tensor grad_bias;
};

Tensor conv2d_forward(const Tensor& x, const ConvSpec& spec,
                      const ConvWeights& wts);
ConvGrads conv2d_backward(const Tensor& x, const ConvSpec& spec,
                          const ConvWeights& wts, const Tensor& grad_y);

/// Zero-pads every channel plane by `pad` on each side.
Tensor pad_planes(const Tensor& x, std::size_t pad);
/// Inverse of pad_planes for gradients: drops the border.
Tensor crop_planes(const Tensor& x, std::size_t pad);

namespace detail {
/// Shared dense stage: y_b = kernel_matrix * cols_b (+ bias), where cols_b is
/// a row-major (C_in*K*K) x (H_out*W_out) matrix for sample b.
void gemm_cols_forward(const ConvWeights& wts, std::span<const double> cols,
                       std::size_t length, std::span<double> y_b);
/// grad_kernel += grad_y_b * cols_b^T ; grad_cols = kernel^T * grad_y_b.
void gemm_cols_backward(const ConvWeights& wts, std::span<const double> cols,
                        std::span<const double> grad_y_b, std::size_t length,
                        std::span<double> grad_kernel,
                        std::span<double> grad_cols);
}  // namespace detail

// Batch normalization ------------------------------------------------------

struct BatchNormParams {
  Tensor gamma;         // (1, 1, 1, C)
  Tensor beta;          // (1, 1, 1, C)
  Tensor running_mean;  // (1, 1, 1, C)
  Tensor running_var;   // (1, 1, 1, C)
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormParams(std::size_t channels = 0);
  std::size_t channels() const { return gamma.size(); }
};

struct BatchNormCache {
  Tensor x_hat;
  std::vector<double> inv_std;
  bool training = true;
};

struct BatchNormGrads {
  Tensor grad_x;
  Tensor grad_gamma;
  Tensor grad_beta;
};

/// Training mode normalizes with batch statistics and updates the running
/// estimates (unbiased variance); inference mode uses the running estimates.
Tensor batchnorm_forward(const Tensor& x, BatchNormParams& p, bool training,
                         BatchNormCache* cache = nullptr);
BatchNormGrads batchnorm_backward(const BatchNormParams& p,
                                  const BatchNormCache& cache,
                                  const Tensor& grad_y);

// Pooling ------------------------------------------------------------------

struct PoolSpec {
  std::size_t kernel = 2;
  std::size_t stride = 2;
  std::size_t padding = 0;

  std::size_t out_extent(std::size_t in) const {
    return (in + 2 * padding - kernel) / stride + 1;
  }
};

struct MaxPoolCache {
  Shape input;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

Tensor maxpool_forward(const Tensor& x, const PoolSpec& spec,
                       MaxPoolCache* cache = nullptr);
Tensor maxpool_backward(const MaxPoolCache& cache, const Tensor& grad_y);

/// Average over each window; padded cells count as zeros.
Tensor avgpool_forward(const Tensor& x, const PoolSpec& spec);
Tensor avgpool_backward(const Shape& input, const PoolSpec& spec,
                        const Tensor& grad_y);

// Fully connected ----------------------------------------------------------

struct FcWeights {
  Tensor weight;  // (1, 1, out, in)
  Tensor bias;    // (1, 1, 1, out)

  std::size_t in() const { return weight.shape().w; }
  std::size_t out() const { return weight.shape().h; }
};

struct FcGrads {
  Tensor grad_x;
  Tensor grad_weight;
  Tensor grad_bias;
};

/// Each sample's C*H*W values form the input vector; output is (N, out, 1, 1).
Tensor fc_forward(const Tensor& x, const FcWeights& wts);
FcGrads fc_backward(const Tensor& x, const FcWeights& wts,
                    const Tensor& grad_y);

Tensor relu_backward(const Tensor& x, const Tensor& grad_y);

// Loss ---------------------------------------------------------------------

struct LossResult {
  double loss = 0.0;
  Tensor grad_logits;
};

/// Mean over the batch of -log softmax(logits)[label]; logits are (N, K, 1, 1).
LossResult softmax_cross_entropy(const Tensor& logits,
                                 std::span<const int> labels);

// Optimizer ----------------------------------------------------------------

struct SgdState {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-3;
  std::vector<Tensor> velocity;
};

/// g = grad + wd * param ; v = mu * v + g ; param -= lr * v.
/// Velocity buffers are created (zeroed) on the first call.
void sgd_step(std::span<Tensor* const> params,
              std::span<const Tensor* const> grads, SgdState& state);

}  // namespace odc
