#include "odc/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace odc {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," +
         std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(shape), data_(shape.size(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape_.size()) {
    throw ShapeError("tensor " + to_string(shape_) + " needs " +
                     std::to_string(shape_.size()) + " values, got " +
                     std::to_string(data_.size()));
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape s) const {
  if (s.size() != size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " +
                     to_string(s));
  }
  return Tensor(s, data_);
}

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  std::transform(a.data().begin(), a.data().end(), out.data().begin(), f);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  Tensor out(a.shape());
  std::transform(a.data().begin(), a.data().end(), b.data().begin(),
                 out.data().begin(), std::plus<>());
  return out;
}

Tensor add(const Tensor& a, double s) {
  return map(a, [s](double v) { return v + s; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  Tensor out(a.shape());
  std::transform(a.data().begin(), a.data().end(), b.data().begin(),
                 out.data().begin(), std::multiplies<>());
  return out;
}

Tensor scale(const Tensor& a, double s) {
  return map(a, [s](double v) { return v * s; });
}

Tensor relu(const Tensor& a) {
  return map(a, [](double v) { return v < 0.0 ? 0.0 : v; });
}

void add_into(Tensor& a, const Tensor& b) {
  require_same(a, b, "add_into");
  auto dst = a.data();
  auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

}  // namespace odc
