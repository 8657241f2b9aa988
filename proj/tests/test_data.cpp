#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "odc/data.hpp"
#include "odc/random.hpp"

using namespace odc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  fs::path p = fs::temp_directory_path() / ("odc_data_" + std::string(info->name()));
  fs::create_directories(p);
  return p;
}

void put_be32(std::ofstream& f, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  f.write(b, 4);
}

// Writes IDX files byte by byte from the format definition.
void write_idx(const fs::path& img, const fs::path& lbl, std::size_t n, std::size_t side,
               const std::vector<unsigned char>& pixels, const std::vector<unsigned char>& labels,
               std::uint32_t image_magic = 0x803) {
  std::ofstream fi(img, std::ios::binary);
  put_be32(fi, image_magic);
  put_be32(fi, static_cast<std::uint32_t>(n));
  put_be32(fi, static_cast<std::uint32_t>(side));
  put_be32(fi, static_cast<std::uint32_t>(side));
  fi.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  std::ofstream fl(lbl, std::ios::binary);
  put_be32(fl, 0x801);
  put_be32(fl, static_cast<std::uint32_t>(labels.size()));
  fl.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

std::vector<char> bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

IdxErrorKind load_error(const fs::path& img, const fs::path& lbl) {
  try {
    load_idx(img, lbl);
  } catch (const IdxError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no IdxError";
  return IdxErrorKind::open_failed;
}

}  // namespace

TEST(Idx, LoadsAndScales32x32) {
  const auto d = temp_dir();
  std::vector<unsigned char> px(2 * 32 * 32);
  for (std::size_t k = 0; k < px.size(); ++k) px[k] = static_cast<unsigned char>(k % 256);
  write_idx(d / "i", d / "l", 2, 32, px, {3, 9});
  const auto ds = load_idx(d / "i", d / "l");
  ASSERT_EQ(ds.images.shape(), (Shape{2, 1, 32, 32}));
  EXPECT_EQ(ds.labels, (std::vector<int>{3, 9}));
  EXPECT_EQ(ds.images.at(0, 0, 0, 5), 5.0 / 255.0);
  EXPECT_EQ(ds.images.at(1, 0, 0, 0), 0.0);
  EXPECT_EQ(load_idx(d / "i", d / "l", 1).size(), 1u);
}

TEST(Idx, Upsamples28To32) {
  const auto d = temp_dir();
  write_idx(d / "i", d / "l", 1, 28, std::vector<unsigned char>(28 * 28, 255), {1});
  const auto ds = load_idx(d / "i", d / "l");
  ASSERT_EQ(ds.images.shape(), (Shape{1, 1, 32, 32}));
  for (double v : ds.images.data()) EXPECT_NEAR(v, 1.0, 1e-15);
}

TEST(Idx, Errors) {
  const auto d = temp_dir();
  EXPECT_EQ(load_error(d / "missing", d / "missing"), IdxErrorKind::open_failed);
  write_idx(d / "i", d / "l", 1, 32, std::vector<unsigned char>(32 * 32), {1}, 0x801);
  EXPECT_EQ(load_error(d / "i", d / "l"), IdxErrorKind::bad_magic);
  write_idx(d / "i", d / "l", 2, 32, std::vector<unsigned char>(32 * 32), {1, 2});
  EXPECT_EQ(load_error(d / "i", d / "l"), IdxErrorKind::truncated);
  write_idx(d / "i", d / "l", 1, 32, std::vector<unsigned char>(32 * 32), {1, 2});
  EXPECT_EQ(load_error(d / "i", d / "l"), IdxErrorKind::count_mismatch);
}

TEST(Idx, SaveRoundTripIsByteExact) {
  const auto d = temp_dir();
  Rng rng(3);
  std::vector<unsigned char> px(3 * 32 * 32);
  for (auto& p : px) p = static_cast<unsigned char>(rng.below(256));
  write_idx(d / "i", d / "l", 3, 32, px, {0, 5, 9});
  const auto ds = load_idx(d / "i", d / "l");
  save_idx(ds, d / "i2", d / "l2");
  EXPECT_EQ(bytes(d / "i"), bytes(d / "i2"));
  EXPECT_EQ(bytes(d / "l"), bytes(d / "l2"));
}

TEST(Resize, ConstantAndEdgeClamp) {
  std::vector<double> src{0, 1, 0, 1};  // 2x2
  const auto out = resize_bilinear(src, 2, 2, 4, 4);
  // Half-pixel centres: dst x=0 maps to src -0.25, clamped to column 0.
  EXPECT_DOUBLE_EQ(out[0], 0.0);
  EXPECT_DOUBLE_EQ(out[3], 1.0);
  EXPECT_DOUBLE_EQ(out[1], 0.25);
}

TEST(Warp, IdentityIsExact) {
  Rng rng(9);
  Tensor img = random_tensor({1, 1, 32, 32}, rng, 0.0, 1.0);
  Tensor out = warp(img, WarpParams{});
  EXPECT_EQ(out.values(), img.values());
}

TEST(Warp, HalfTurnReversesPlane) {
  Rng rng(10);
  Tensor img = random_tensor({1, 1, 9, 9}, rng, 0.0, 1.0);
  Tensor out = warp(img, WarpParams{180.0, 1.0, 0.0, 0.0});
  for (std::size_t h = 0; h < 9; ++h)
    for (std::size_t w = 0; w < 9; ++w)
      EXPECT_NEAR(out.at(0, 0, h, w), img.at(0, 0, 8 - h, 8 - w), 1e-12);
}

TEST(Warp, QuarterTurnDirection) {
  // A positive angle turns +x (columns) towards +y (rows).
  Tensor img({1, 1, 5, 5});
  img.at(0, 0, 2, 4) = 1.0;  // right of centre
  Tensor out = warp(img, WarpParams{90.0, 1.0, 0.0, 0.0});
  EXPECT_NEAR(out.at(0, 0, 4, 2), 1.0, 1e-12);
  EXPECT_NEAR(sum(out), 1.0, 1e-12);
}

TEST(Warp, IntegerTranslationShifts) {
  Tensor img({1, 1, 5, 5});
  img.at(0, 0, 1, 1) = 1.0;
  Tensor out = warp(img, WarpParams{0.0, 1.0, 2.0, 1.0});
  EXPECT_EQ(out.at(0, 0, 2, 3), 1.0);
  EXPECT_EQ(sum(out), 1.0);
}

TEST(Warp, StaysInUnitRange) {
  Rng rng(12);
  Tensor img = random_tensor({1, 1, 32, 32}, rng, 0.0, 1.0);
  const auto spec = DistortionSpec::rts(5);
  for (std::uint64_t k = 0; k < 50; ++k) {
    Tensor out = warp(img, draw_params(spec, k));
    for (double v : out.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Distortion, DrawRanges) {
  const auto rot = DistortionSpec::rotated(7);
  const auto rts = DistortionSpec::rts(7);
  for (std::uint64_t k = 0; k < 2000; ++k) {
    const auto a = draw_params(rot, k);
    EXPECT_GE(a.angle_deg, -90.0);
    EXPECT_LT(a.angle_deg, 90.0);
    EXPECT_EQ(a.scale, 1.0);
    EXPECT_EQ(a.tx, 0.0);
    const auto b = draw_params(rts, k);
    EXPECT_GE(b.scale, 0.7);
    EXPECT_LT(b.scale, 1.0);
    EXPECT_GE(b.tx, -5.0);
    EXPECT_LT(b.tx, 5.0);
    EXPECT_GE(b.ty, -5.0);
    EXPECT_LT(b.ty, 5.0);
    EXPECT_GE(b.angle_deg, -45.0);
    EXPECT_LT(b.angle_deg, 45.0);
  }
}

TEST(Distortion, KeyedPerImage) {
  Rng rng(1);
  LabeledDataset ds;
  ds.images = random_tensor({6, 1, 12, 12}, rng, 0.0, 1.0);
  ds.labels = {0, 1, 2, 3, 4, 5};
  const auto spec = DistortionSpec::rts(4);
  const auto a = distort_dataset(ds, spec);
  const auto b = distort_dataset(ds, spec);
  EXPECT_EQ(a.images.values(), b.images.values());
  EXPECT_EQ(a.labels, ds.labels);
  EXPECT_EQ(a.provenance, Provenance::rts);
  EXPECT_EQ(a.transform_order, "scale,rotate,translate");
  // Image 2 is distorted identically whether or not later images exist.
  const auto c = distort_dataset(slice(ds, 0, 3), spec);
  EXPECT_EQ(std::vector<double>(c.images.sample(2).begin(), c.images.sample(2).end()),
            std::vector<double>(a.images.sample(2).begin(), a.images.sample(2).end()));
  EXPECT_NE(draw_params(spec, 0).angle_deg, draw_params(DistortionSpec::rts(5), 0).angle_deg);
}

TEST(Distortion, IdentitySpecIsExact) {
  Rng rng(2);
  LabeledDataset ds;
  ds.images = random_tensor({3, 1, 32, 32}, rng, 0.0, 1.0);
  ds.labels = {1, 2, 3};
  EXPECT_EQ(distort_dataset(ds, DistortionSpec::identity()).images.values(), ds.images.values());
}

TEST(Distortion, ModeNames) {
  EXPECT_EQ(parse_distortion_mode("rts"), DistortionMode::rts);
  EXPECT_EQ(parse_distortion_mode("rotated"), DistortionMode::rotated);
  EXPECT_THROW(parse_distortion_mode("shear"), std::invalid_argument);
}
