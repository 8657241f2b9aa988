#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace odc {

/// Raised when tensor extents do not line up with an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Extents of a batch/channel/height/width tensor.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t size() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Flattened position of (h, w) in a plane of the given width. Out-of-range
/// inputs are allowed; callers handle bounds.
constexpr std::ptrdiff_t flat_index(std::ptrdiff_t h, std::ptrdiff_t w,
                                    std::ptrdiff_t width) {
  return h * width + w;
}

/// Dense 4-D array of doubles, row-major with batch outermost and width
/// innermost, so that each (b, c) plane is contiguous.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  /// Throws ShapeError when values.size() differs from the shape's product.
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(std::size_t b, std::size_t c, std::size_t h,
                    std::size_t w) const {
    return ((b * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
    return data_[index(b, c, h, w)];
  }
  double at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(b, c, h, w)];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  /// Contiguous H*W plane of channel c in sample b.
  std::span<double> plane(std::size_t b, std::size_t c) {
    return std::span<double>(data_).subspan(index(b, c, 0, 0), shape_.plane());
  }
  std::span<const double> plane(std::size_t b, std::size_t c) const {
    return std::span<const double>(data_).subspan(index(b, c, 0, 0),
                                                  shape_.plane());
  }
  /// All channels of sample b.
  std::span<double> sample(std::size_t b) {
    const std::size_t len = shape_.c * shape_.plane();
    return std::span<double>(data_).subspan(b * len, len);
  }
  std::span<const double> sample(std::size_t b) const {
    const std::size_t len = shape_.c * shape_.plane();
    return std::span<const double>(data_).subspan(b * len, len);
  }

  void fill(double v);
  /// Same data under new extents of equal product.
  Tensor reshaped(Shape s) const;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

/// Row-vector tensor (1, 1, 1, n).
inline Shape vector_shape(std::size_t n) { return {1, 1, 1, n}; }

/// Read-only flattened view of one channel plane. Position p maps to
/// (p / width, p % width).
class FlatView {
 public:
  FlatView(std::span<const double> plane, std::size_t width)
      : values_(plane), width_(width) {}
  FlatView(const Tensor& t, std::size_t b, std::size_t c)
      : values_(t.plane(b, c)), width_(t.shape().w) {}

  std::size_t size() const { return values_.size(); }
  std::size_t width() const { return width_; }
  double operator[](std::size_t p) const { return values_[p]; }
  /// Zero outside [0, size).
  double get(std::ptrdiff_t p) const {
    return (p < 0 || p >= static_cast<std::ptrdiff_t>(values_.size()))
               ? 0.0
               : values_[static_cast<std::size_t>(p)];
  }
  std::size_t row(std::size_t p) const { return p / width_; }
  std::size_t col(std::size_t p) const { return p % width_; }

 private:
  std::span<const double> values_;
  std::size_t width_;
};

Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double s);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);

/// In-place a += b.
void add_into(Tensor& a, const Tensor& b);

double sum(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace odc
