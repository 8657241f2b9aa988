#include "odc/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <tuple>
#include <cstdio>

#include "odc/random.hpp"

namespace odc {

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::origin: return "origin";
    case Provenance::rotated: return "rotated";
    case Provenance::rts: return "rts";
  }
  return "?";
}

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IdxError(IdxErrorKind::open_failed,
                   "cannot open '" + path.string() + "'");
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t at) {
  return (std::uint32_t{buf[at]} << 24) | (std::uint32_t{buf[at + 1]} << 16) |
         (std::uint32_t{buf[at + 2]} << 8) | std::uint32_t{buf[at + 3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes, 4);
}

void require_header(const std::vector<unsigned char>& buf, std::size_t bytes,
                    const std::filesystem::path& path) {
  if (buf.size() < bytes) {
    throw IdxError(IdxErrorKind::truncated,
                   "truncated header in '" + path.string() + "'");
  }
}

void check_magic(std::uint32_t got, std::uint32_t want,
                 const std::filesystem::path& path) {
  if (got != want) {
    char msg[96];
    std::snprintf(msg, sizeof msg, "bad magic 0x%08x (expected 0x%08x) in ",
                  got, want);
    throw IdxError(IdxErrorKind::bad_magic, msg + path.string());
  }
}

unsigned char quantize(double v) {
  const double q = std::floor(v * 255.0 + 0.5);
  return static_cast<unsigned char>(std::clamp(q, 0.0, 255.0));
}

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images,
                        const std::filesystem::path& labels,
                        std::size_t limit) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  require_header(img, 16, images);
  require_header(lab, 8, labels);
  check_magic(read_be32(img, 0), kImageMagic, images);
  check_magic(read_be32(lab, 0), kLabelMagic, labels);

  const std::size_t count = read_be32(img, 4);
  const std::size_t rows = read_be32(img, 8);
  const std::size_t cols = read_be32(img, 12);
  const std::size_t label_count = read_be32(lab, 4);
  if (count != label_count) {
    throw IdxError(IdxErrorKind::count_mismatch,
                   std::to_string(count) + " images but " +
                       std::to_string(label_count) + " labels");
  }
  const std::size_t pixels = rows * cols;
  if (img.size() < 16 + count * pixels) {
    throw IdxError(IdxErrorKind::truncated,
                   "image data truncated in '" + images.string() + "'");
  }
  if (lab.size() < 8 + count) {
    throw IdxError(IdxErrorKind::truncated,
                   "label data truncated in '" + labels.string() + "'");
  }

  const std::size_t n = limit == 0 ? count : std::min(limit, count);
  LabeledDataset ds;
  ds.images = Tensor({n, 1, kImageSide, kImageSide});
  ds.labels.resize(n);
  std::vector<double> plane(pixels);
  for (std::size_t k = 0; k < n; ++k) {
    const unsigned char* src = img.data() + 16 + k * pixels;
    for (std::size_t p = 0; p < pixels; ++p) plane[p] = src[p] / 255.0;
    auto dst = ds.images.plane(k, 0);
    if (rows == kImageSide && cols == kImageSide) {
      std::copy(plane.begin(), plane.end(), dst.begin());
    } else {
      const auto up = resize_bilinear(plane, rows, cols, kImageSide, kImageSide);
      std::copy(up.begin(), up.end(), dst.begin());
    }
    ds.labels[k] = lab[8 + k];
  }
  return ds;
}

void save_idx(const LabeledDataset& ds, const std::filesystem::path& images,
              const std::filesystem::path& labels) {
  const auto& s = ds.images.shape();
  if (s.c != 1 || s.n != ds.labels.size()) {
    throw ShapeError("save_idx: expected (N,1,H,W) images with N labels");
  }
  std::ofstream img(images, std::ios::binary);
  std::ofstream lab(labels, std::ios::binary);
  if (!img || !lab) {
    throw IdxError(IdxErrorKind::open_failed, "cannot write IDX output");
  }
  write_be32(img, kImageMagic);
  write_be32(img, static_cast<std::uint32_t>(s.n));
  write_be32(img, static_cast<std::uint32_t>(s.h));
  write_be32(img, static_cast<std::uint32_t>(s.w));
  std::vector<char> bytes(s.plane());
  for (std::size_t k = 0; k < s.n; ++k) {
    auto plane = ds.images.plane(k, 0);
    std::transform(plane.begin(), plane.end(), bytes.begin(),
                   [](double v) { return static_cast<char>(quantize(v)); });
    img.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  write_be32(lab, kLabelMagic);
  write_be32(lab, static_cast<std::uint32_t>(s.n));
  for (int l : ds.labels) lab.put(static_cast<char>(l));
  if (!img || !lab) {
    throw IdxError(IdxErrorKind::open_failed, "failed writing IDX output");
  }
}

std::vector<double> resize_bilinear(std::span<const double> src,
                                    std::size_t src_h, std::size_t src_w,
                                    std::size_t dst_h, std::size_t dst_w) {
  std::vector<double> dst(dst_h * dst_w);
  if (src_h == 0 || src_w == 0) return dst;
  const double sy = static_cast<double>(src_h) / static_cast<double>(dst_h);
  const double sx = static_cast<double>(src_w) / static_cast<double>(dst_w);
  auto coord = [](std::size_t d, double ratio, std::size_t extent) {
    const double c = std::clamp((static_cast<double>(d) + 0.5) * ratio - 0.5,
                                0.0, static_cast<double>(extent - 1));
    const auto i0 = static_cast<std::size_t>(c);
    const std::size_t i1 = std::min(i0 + 1, extent - 1);
    return std::tuple{i0, i1, c - static_cast<double>(i0)};
  };
  for (std::size_t y = 0; y < dst_h; ++y) {
    const auto [y0, y1, fy] = coord(y, sy, src_h);
    for (std::size_t x = 0; x < dst_w; ++x) {
      const auto [x0, x1, fx] = coord(x, sx, src_w);
      const double top = (1 - fx) * src[y0 * src_w + x0] + fx * src[y0 * src_w + x1];
      const double bot = (1 - fx) * src[y1 * src_w + x0] + fx * src[y1 * src_w + x1];
      dst[y * dst_w + x] = (1 - fy) * top + fy * bot;
    }
  }
  return dst;
}

void warp(std::span<const double> src, std::size_t h, std::size_t w,
          const WarpParams& p, std::span<double> dst) {
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double rad = p.angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(rad);
  const double sn = std::sin(rad);
  const double inv_scale = 1.0 / p.scale;
  auto pixel = [&](std::ptrdiff_t r, std::ptrdiff_t c) {
    if (r < 0 || c < 0 || r >= static_cast<std::ptrdiff_t>(h) ||
        c >= static_cast<std::ptrdiff_t>(w)) {
      return 0.0;
    }
    return src[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)];
  };
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double x = static_cast<double>(c) - cx - p.tx;
      const double y = static_cast<double>(r) - cy - p.ty;
      // Undo rotation, then scale.
      const double sx = (cs * x + sn * y) * inv_scale + cx;
      const double sy = (-sn * x + cs * y) * inv_scale + cy;
      const double x0 = std::floor(sx);
      const double y0 = std::floor(sy);
      double v = 0.0;
      if (std::isfinite(sx) && std::isfinite(sy) && x0 >= -1.0 && y0 >= -1.0 &&
          x0 < static_cast<double>(w) && y0 < static_cast<double>(h)) {
        const double fx = sx - x0;
        const double fy = sy - y0;
        const auto ix = static_cast<std::ptrdiff_t>(x0);
        const auto iy = static_cast<std::ptrdiff_t>(y0);
        // std::lerp is exact at 0 and bounded, so identity warps are
        // bit-exact and values stay inside the source range.
        const double top = std::lerp(pixel(iy, ix), pixel(iy, ix + 1), fx);
        const double bot = std::lerp(pixel(iy + 1, ix), pixel(iy + 1, ix + 1), fx);
        v = std::lerp(top, bot, fy);
      }
      dst[r * w + c] = v;
    }
  }
}

Tensor warp(const Tensor& image, const WarpParams& p) {
  const auto& s = image.shape();
  Tensor out(s);
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) {
      warp(image.plane(b, c), s.h, s.w, p, out.plane(b, c));
    }
  }
  return out;
}

std::string to_string(DistortionMode m) {
  return m == DistortionMode::rotated ? "rotated" : "rts";
}

DistortionMode parse_distortion_mode(const std::string& s) {
  if (s == "rotated") return DistortionMode::rotated;
  if (s == "rts") return DistortionMode::rts;
  throw std::invalid_argument("unknown distortion mode '" + s + "'");
}

DistortionSpec DistortionSpec::rotated(std::uint64_t seed) {
  DistortionSpec s;
  s.mode = DistortionMode::rotated;
  s.rotation_deg = {-90.0, 90.0};
  s.seed = seed;
  return s;
}

DistortionSpec DistortionSpec::rts(std::uint64_t seed) {
  DistortionSpec s;
  s.mode = DistortionMode::rts;
  s.rotation_deg = {-45.0, 45.0};
  s.scale = {0.7, 1.0};
  s.translation = {-5.0, 5.0};
  s.seed = seed;
  return s;
}

DistortionSpec DistortionSpec::identity(std::uint64_t seed) {
  DistortionSpec s;
  s.mode = DistortionMode::rts;
  s.rotation_deg = {0.0, 0.0};
  s.scale = {1.0, 1.0};
  s.translation = {0.0, 0.0};
  s.seed = seed;
  return s;
}

DistortionSpec DistortionSpec::for_mode(DistortionMode m, std::uint64_t seed) {
  return m == DistortionMode::rotated ? rotated(seed) : rts(seed);
}

WarpParams draw_params(const DistortionSpec& spec, std::uint64_t index) {
  Rng rng(stream_key(spec.seed, index));
  WarpParams p;
  // Draw order is fixed so every parameter has a stable stream position.
  p.scale = rng.uniform(spec.scale.lo, spec.scale.hi);
  p.tx = rng.uniform(spec.translation.lo, spec.translation.hi);
  p.ty = rng.uniform(spec.translation.lo, spec.translation.hi);
  p.angle_deg = rng.uniform(spec.rotation_deg.lo, spec.rotation_deg.hi);
  return p;
}

LabeledDataset distort_dataset(const LabeledDataset& ds,
                               const DistortionSpec& spec) {
  LabeledDataset out;
  out.images = Tensor(ds.images.shape());
  out.labels = ds.labels;
  out.provenance = spec.mode == DistortionMode::rotated ? Provenance::rotated
                                                        : Provenance::rts;
  out.seed = spec.seed;
  out.transform_order = "scale,rotate,translate";
  const auto& s = ds.images.shape();
  for (std::size_t k = 0; k < s.n; ++k) {
    const WarpParams p = draw_params(spec, k);
    for (std::size_t c = 0; c < s.c; ++c) {
      warp(ds.images.plane(k, c), s.h, s.w, p, out.images.plane(k, c));
    }
  }
  return out;
}

LabeledDataset slice(const LabeledDataset& ds, std::size_t begin,
                     std::size_t count) {
  const auto& s = ds.images.shape();
  if (begin + count > s.n) {
    throw std::out_of_range("slice: range exceeds dataset");
  }
  LabeledDataset out;
  const std::size_t len = s.c * s.plane();
  auto src = ds.images.data().subspan(begin * len, count * len);
  out.images = Tensor({count, s.c, s.h, s.w},
                      std::vector<double>(src.begin(), src.end()));
  out.labels.assign(ds.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    ds.labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
  out.provenance = ds.provenance;
  out.seed = ds.seed;
  out.transform_order = ds.transform_order;
  return out;
}

}  // namespace odc
