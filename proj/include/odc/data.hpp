#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "odc/tensor.hpp"

namespace odc {

enum class Provenance { origin, rotated, rts };
std::string to_string(Provenance p);

/// Images (N, 1, 32, 32) with values in [0, 1] and one label per image.
struct LabeledDataset {
  Tensor images;
  std::vector<int> labels;
  Provenance provenance = Provenance::origin;
  std::uint64_t seed = 0;
  std::string transform_order;  // empty for origin data

  std::size_t size() const { return labels.size(); }
};

/// Side length every loaded image is resampled to.
inline constexpr std::size_t kImageSide = 32;

enum class IdxErrorKind { open_failed, bad_magic, truncated, count_mismatch };

class IdxError : public std::runtime_error {
 public:
  IdxError(IdxErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  IdxErrorKind kind() const { return kind_; }

 private:
  IdxErrorKind kind_;
};

/// Reads an IDX image/label pair (big-endian, magic 0x803 / 0x801). Pixels are
/// scaled by 1/255 and resampled bilinearly to 32x32 when needed. `limit`
/// keeps the first records in file order; 0 keeps all.
LabeledDataset load_idx(const std::filesystem::path& images,
                        const std::filesystem::path& labels,
                        std::size_t limit = 0);

/// Writes 32x32 IDX files; pixels are quantized with round-half-up.
void save_idx(const LabeledDataset& ds, const std::filesystem::path& images,
              const std::filesystem::path& labels);

/// Bilinear resize of one plane (half-pixel centres, edge clamped).
std::vector<double> resize_bilinear(std::span<const double> src,
                                    std::size_t src_h, std::size_t src_w,
                                    std::size_t dst_h, std::size_t dst_w);

struct WarpParams {
  double angle_deg = 0.0;
  double scale = 1.0;
  double tx = 0.0;  // columns
  double ty = 0.0;  // rows
};

/// Inverse-mapped resampling about the plane centre with
/// T = translate o rotate o scale. x runs along columns and y down the rows;
/// a positive angle turns +x towards +y. Bilinear, zero outside the frame.
void warp(std::span<const double> src, std::size_t h, std::size_t w,
          const WarpParams& p, std::span<double> dst);
Tensor warp(const Tensor& image, const WarpParams& p);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

enum class DistortionMode { rotated, rts };
std::string to_string(DistortionMode m);
DistortionMode parse_distortion_mode(const std::string& s);

struct DistortionSpec {
  DistortionMode mode = DistortionMode::rotated;
  Range rotation_deg{-90.0, 90.0};
  Range scale{1.0, 1.0};
  Range translation{0.0, 0.0};
  std::uint64_t seed = 0;

  static DistortionSpec rotated(std::uint64_t seed);
  static DistortionSpec rts(std::uint64_t seed);
  /// All ranges collapsed to the identity transform.
  static DistortionSpec identity(std::uint64_t seed = 0);
  static DistortionSpec for_mode(DistortionMode m, std::uint64_t seed);
};

/// Parameters for image `index`, drawn uniformly on [lo, hi) from a stream
/// keyed by (seed, index).
WarpParams draw_params(const DistortionSpec& spec, std::uint64_t index);

LabeledDataset distort_dataset(const LabeledDataset& ds,
                               const DistortionSpec& spec);

/// Copy of `ds` restricted to [begin, begin + count).
LabeledDataset slice(const LabeledDataset& ds, std::size_t begin,
                     std::size_t count);

}  // namespace odc
