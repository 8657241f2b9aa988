#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "odc/layers.hpp"
#include "odc/tensor.hpp"

namespace odc {

enum class Variant { vanilla, onedconv };

std::string to_string(Variant v);
/// Throws std::invalid_argument for anything but "vanilla" / "onedconv".
Variant parse_variant(const std::string& s);

enum class LayerKind {
  conv,
  onedconv,
  batchnorm,
  relu,
  maxpool,
  avgpool,
  global_avgpool,
  fc,
  residual_begin,  // remembers the block input
  shortcut,        // following layers transform the remembered input
  residual_end,    // main path + shortcut
};

std::string to_string(LayerKind k);
LayerKind parse_layer_kind(const std::string& s);

struct Extents {
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  friend bool operator==(const Extents&, const Extents&) = default;
};

struct LayerDescriptor {
  LayerKind kind = LayerKind::relu;
  std::string name;
  ConvSpec conv;              // conv, onedconv
  PoolSpec pool;              // maxpool, avgpool
  std::size_t features = 0;   // fc outputs
  Extents in;                 // filled by resolve()
  Extents out;

  bool is_conv() const {
    return kind == LayerKind::conv || kind == LayerKind::onedconv;
  }
};

class UnresolvedGraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct ModelGraph {
  std::string model;
  Variant variant = Variant::vanilla;
  std::size_t classes = 10;
  Extents input{1, 32, 32};
  std::vector<LayerDescriptor> layers;
  bool resolved = false;
};

/// Chains extents through the graph and checks residual joins. Throws
/// ShapeError on any inconsistency.
void resolve(ModelGraph& g);

/// Standard 18-layer residual net for 32x32 inputs: 3x3 stride-2 stem, four
/// stages of two basic blocks (64/128/256/512), global average pool and a
/// `classes`-way fc. The onedconv variant swaps every 3x3 convolution
/// (stem included) for OneDConv; 1x1 projection shortcuts stay vanilla.
ModelGraph build_resnet18(Variant variant, std::size_t classes = 10,
                          std::size_t in_channels = 3,
                          std::size_t input_hw = 32);

/// conv 16 -> bn -> relu -> maxpool 2 -> conv 32 -> bn -> relu -> maxpool 2
/// -> fc. Convolutions are 3x3 with bias.
ModelGraph build_tiny_cnn(Variant variant, std::size_t classes = 10,
                          std::size_t in_channels = 1,
                          std::size_t input_hw = 32);

ModelGraph build_model(const std::string& model, Variant variant,
                       std::size_t classes, std::size_t in_channels);

/// Trainable parameters of one layer.
std::uint64_t layer_params(const LayerDescriptor& layer);
/// Non-trainable buffers (batchnorm running mean/var).
std::uint64_t layer_buffers(const LayerDescriptor& layer);

/// Sum of trainable parameters. Throws UnresolvedGraphError.
std::uint64_t count_params(const ModelGraph& g);
std::uint64_t count_buffers(const ModelGraph& g);

/// Extra parameters one OneDConv layer adds over the vanilla layer:
/// (K-1)(K^2 C_in + 1).
std::uint64_t shape_conv_params(const ConvSpec& spec);

struct FlopCount {
  std::uint64_t main = 0;
  std::uint64_t overhead = 0;
};

/// main = 2 H W C_out (C_in K^2 + 1), overhead = 2 H W (K-1)(C_in K^2 + 1),
/// H and W being the layer's output extents. Overhead is zero for vanilla
/// layers; non-convolution layers give {0, 0}.
FlopCount count_flops(const LayerDescriptor& layer);
FlopCount count_flops(const ModelGraph& g);

struct MeasuredFlops {
  std::uint64_t main = 0;      // main convolution, bias folded as a MAC
  std::uint64_t overhead = 0;  // shape convolution + gap/offset arithmetic
  std::uint64_t sampling = 0;  // interpolation arithmetic
  std::uint64_t total() const { return main + overhead + sampling; }
};

/// Executes the layer with a scalar type that counts every floating-point
/// add, subtract and multiply, two per multiply-accumulate. Weights are
/// drawn deterministically; counts do not depend on their values.
/// Non-convolution layers and empty inputs give zero.
MeasuredFlops measured_flops(const LayerDescriptor& layer, const Tensor& input);

/// One line per layer; parse_graph(serialize(g)) reproduces g.
std::string serialize(const ModelGraph& g);
ModelGraph parse_graph(const std::string& text);

struct AccountRow {
  std::string name;
  std::string kind;
  std::uint64_t params = 0;
  FlopCount flops;
};

std::vector<AccountRow> account(const ModelGraph& g);

}  // namespace odc
