#pragma once

#include <cstdint>
#include <random>

#include "odc/tensor.hpp"

namespace odc {

/// SplitMix64 finalizer; used to derive independent stream keys.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t index) {
  return mix64(mix64(seed) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

/// mt19937_64 with library-independent real draws (53-bit mantissa), so
/// sequences are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  /// Uniform on [lo, hi); returns lo when the range is empty.
  double uniform(double lo, double hi) {
    return hi > lo ? lo + (hi - lo) * uniform() : lo;
  }
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

inline Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(s);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace odc
