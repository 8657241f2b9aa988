#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "odc/tensor.hpp"

namespace odc::gradcheck {

/// Central differences (f(x + eps e_k) - f(x - eps e_k)) / (2 eps) for every
/// coordinate k. Throws std::domain_error if f returns a non-finite value.
Tensor finite_diff(const std::function<double(const Tensor&)>& f,
                   const Tensor& x, double eps = 1e-5);

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// A differentiable scalar function of several named tensors together with
/// its claimed gradient. `loss` must not touch any backward code; it is
/// the only thing the oracle evaluates.
struct GradCase {
  std::string op;
  std::vector<std::string> names;
  std::vector<Tensor> inputs;
  std::function<double(const std::vector<Tensor>&)> loss;
  std::function<std::vector<Tensor>(const std::vector<Tensor>&)> analytic;
};

struct GroupReport {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t compared = 0;
};

struct GradReport {
  std::string op;
  std::uint64_t seed = 0;
  double tol = 0.0;
  std::vector<GroupReport> groups;
  bool pass = false;

  double max_rel_err() const;
};

using CaseFactory = std::function<GradCase(std::uint64_t seed)>;

/// Builds the case for `seed`, compares analytic against finite_diff for
/// every group. pass iff every group's max relative error is below tol.
/// Failures are reported, never thrown.
GradReport check(const CaseFactory& make_case, std::uint64_t seed, double tol,
                 double eps = 1e-5);

// Built-in cases. Each loss is sum(output * R) for a fixed random R so that
// every output element contributes.

GradCase conv2d_case(std::uint64_t seed, std::size_t kernel = 3,
                     std::size_t stride = 1);
GradCase fc_case(std::uint64_t seed);
GradCase batchnorm_case(std::uint64_t seed);
GradCase softmax_ce_case(std::uint64_t seed);
GradCase maxpool_case(std::uint64_t seed);
GradCase avgpool_case(std::uint64_t seed);
/// 1x2x6x6 input, K=3. The shape bias is +0.3 and the shape kernel small,
/// keeping every sampled position away from integer interpolation kinks.
GradCase onedconv_case(std::uint64_t seed, std::size_t stride = 1);
/// Negative control: onedconv with its kernel gradient doubled.
GradCase corrupted_onedconv_case(std::uint64_t seed);

struct NamedCase {
  std::string name;
  CaseFactory factory;
  double tol;
};

/// The suite run by `gradcheck`: linear ops at 1e-6, the rest at 1e-4.
std::vector<NamedCase> standard_suite();

}  // namespace odc::gradcheck
