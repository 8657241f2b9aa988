#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "odc/accounting.hpp"
#include "odc/layers.hpp"
#include "odc/onedconv.hpp"
#include "odc/tensor.hpp"

namespace odc {

struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

struct NamedTensor {
  std::string name;
  Tensor* value;
};

/// Deviation of one OneDConv layer's offsets from the square layout,
/// |d_i - (i - c) W_pad| over the non-centre filters.
struct OffsetDeviation {
  std::string layer;
  double sum = 0.0;
  std::uint64_t count = 0;
  double max_abs = 0.0;
  double max_value = 0.0;  // signed deviation at the maximum
  std::size_t max_sample = 0;
  std::size_t max_filter = 0;
  std::size_t max_h = 0;
  std::size_t max_w = 0;

  double mean() const { return count == 0 ? 0.0 : sum / static_cast<double>(count); }
  /// Folds `o` in; `sample_offset` shifts o's sample indices.
  void merge(const OffsetDeviation& o, std::size_t sample_offset = 0);
};

/// Executes a resolved ModelGraph: forward, backward and parameter access.
/// Main kernels are He-uniform from `seed` in layer order; fc weights are
/// uniform in +-1/sqrt(fan_in); biases and every shape convolution start at
/// zero, so both variants share main weights for the same seed.
class Network {
 public:
  Network(ModelGraph graph, std::uint64_t seed);
  ~Network();
  Network(const Network&);
  Network& operator=(const Network&);
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;

  const ModelGraph& graph() const { return graph_; }

  /// Logits (N, classes, 1, 1). Keeps the caches needed by backward().
  Tensor forward(const Tensor& x, bool training);
  /// Gradients of the last forward() given dL/dlogits; overwrites grads.
  void backward(const Tensor& grad_logits);

  std::vector<ParamRef> parameters();
  /// Parameters followed by batchnorm running statistics, in layer order.
  std::vector<NamedTensor> state();

  std::size_t dynamic_layers() const;
  /// Offset deviation per OneDConv layer for the last forward().
  std::vector<OffsetDeviation> offset_deviation() const;

 private:
  struct Node;
  ModelGraph graph_;
  std::vector<Node> nodes_;
};

/// Binary container: "ODC1", then per entry: u32 name length, name bytes,
/// four u32 extents (N, C, H, W), and float32 values; all little-endian.
void save_checkpoint(Network& net, const std::filesystem::path& path);
/// Loads values into `net`. Throws std::runtime_error on a bad magic, an
/// unknown or missing entry, or a shape mismatch.
void load_checkpoint(Network& net, const std::filesystem::path& path);
/// Entry names in a checkpoint file, in stored order.
std::vector<std::string> checkpoint_names(const std::filesystem::path& path);

}  // namespace odc
