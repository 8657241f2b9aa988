#include "odc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "odc/layers.hpp"
#include "odc/onedconv.hpp"
#include "odc/random.hpp"

namespace odc::gradcheck {

Tensor finite_diff(const std::function<double(const Tensor&)>& f,
                   const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff: eps must be > 0");
  Tensor probe = x;
  Tensor grad(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double orig = probe[k];
    probe[k] = orig + eps;
    const double up = f(probe);
    probe[k] = orig - eps;
    const double down = f(probe);
    probe[k] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::domain_error("finite_diff: non-finite function value at "
                              "coordinate " + std::to_string(k));
    }
    grad[k] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double relative_error(double analytic, double numeric) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

double GradReport::max_rel_err() const {
  double m = 0.0;
  for (const auto& g : groups) m = std::max(m, g.max_rel_err);
  return m;
}

GradReport check(const CaseFactory& make_case, std::uint64_t seed, double tol,
                 double eps) {
  GradReport report;
  report.seed = seed;
  report.tol = tol;
  GradCase gc = make_case(seed);
  report.op = gc.op;
  std::vector<Tensor> analytic;
  try {
    analytic = gc.analytic(gc.inputs);
  } catch (const std::exception&) {
    report.pass = false;
    return report;
  }
  bool pass = analytic.size() == gc.inputs.size();
  for (std::size_t g = 0; g < gc.inputs.size() && pass; ++g) {
    GroupReport gr;
    gr.name = g < gc.names.size() ? gc.names[g] : "input" + std::to_string(g);
    auto f = [&](const Tensor& t) {
      std::vector<Tensor> args = gc.inputs;
      args[g] = t;
      return gc.loss(args);
    };
    Tensor numeric;
    try {
      numeric = finite_diff(f, gc.inputs[g], eps);
    } catch (const std::exception&) {
      pass = false;
      gr.max_rel_err = INFINITY;
      report.groups.push_back(gr);
      break;
    }
    if (analytic[g].shape() != numeric.shape()) {
      pass = false;
      gr.max_rel_err = INFINITY;
      report.groups.push_back(gr);
      break;
    }
    for (std::size_t k = 0; k < numeric.size(); ++k) {
      const double a = analytic[g][k];
      const double n = numeric[k];
      gr.max_abs_err = std::max(gr.max_abs_err, std::abs(a - n));
      const double rel = relative_error(a, n);
      // NaN compares false; force it to register as a failure.
      gr.max_rel_err = std::isnan(rel) ? INFINITY : std::max(gr.max_rel_err, rel);
      ++gr.compared;
    }
    if (!(gr.max_rel_err < tol)) pass = false;
    report.groups.push_back(gr);
  }
  report.pass = pass;
  return report;
}

namespace {

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

ConvWeights conv_weights(const std::vector<Tensor>& in, std::size_t k,
                         std::size_t b) {
  ConvWeights w;
  w.kernel = in[k];
  w.bias = in[b];
  return w;
}

}  // namespace

GradCase conv2d_case(std::uint64_t seed, std::size_t kernel,
                     std::size_t stride) {
  Rng rng(stream_key(seed, 101));
  ConvSpec spec{2, 3, kernel, stride, std::nullopt, true};
  const Shape xs{1, 2, 5, 5};
  const Shape ys{1, 3, spec.out_extent(5), spec.out_extent(5)};
  GradCase gc;
  gc.op = "conv2d_k" + std::to_string(kernel) + "_s" + std::to_string(stride);
  gc.names = {"x", "kernel", "bias"};
  gc.inputs = {random_tensor(xs, rng),
               random_tensor({3, 2, kernel, kernel}, rng),
               random_tensor(vector_shape(3), rng)};
  const Tensor r = random_tensor(ys, rng);
  gc.loss = [spec, r](const std::vector<Tensor>& in) {
    return dot(conv2d_forward(in[0], spec, conv_weights(in, 1, 2)), r);
  };
  gc.analytic = [spec, r](const std::vector<Tensor>& in) {
    auto g = conv2d_backward(in[0], spec, conv_weights(in, 1, 2), r);
    return std::vector<Tensor>{g.grad_x, g.grad_kernel, g.grad_bias};
  };
  return gc;
}

GradCase fc_case(std::uint64_t seed) {
  Rng rng(stream_key(seed, 102));
  GradCase gc;
  gc.op = "fc";
  gc.names = {"x", "weight", "bias"};
  gc.inputs = {random_tensor({2, 3, 2, 2}, rng),
               random_tensor({1, 1, 4, 12}, rng),
               random_tensor(vector_shape(4), rng)};
  const Tensor r = random_tensor({2, 4, 1, 1}, rng);
  auto weights = [](const std::vector<Tensor>& in) {
    return FcWeights{in[1], in[2]};
  };
  gc.loss = [r, weights](const std::vector<Tensor>& in) {
    return dot(fc_forward(in[0], weights(in)), r);
  };
  gc.analytic = [r, weights](const std::vector<Tensor>& in) {
    auto g = fc_backward(in[0], weights(in), r);
    return std::vector<Tensor>{g.grad_x, g.grad_weight, g.grad_bias};
  };
  return gc;
}

GradCase batchnorm_case(std::uint64_t seed) {
  Rng rng(stream_key(seed, 103));
  GradCase gc;
  gc.op = "batchnorm";
  gc.names = {"x", "gamma", "beta"};
  gc.inputs = {random_tensor({3, 2, 3, 3}, rng),
               random_tensor(vector_shape(2), rng, 0.5, 1.5),
               random_tensor(vector_shape(2), rng)};
  const Tensor r = random_tensor({3, 2, 3, 3}, rng);
  auto params = [](const std::vector<Tensor>& in) {
    BatchNormParams p(2);
    p.gamma = in[1];
    p.beta = in[2];
    return p;
  };
  gc.loss = [r, params](const std::vector<Tensor>& in) {
    auto p = params(in);
    return dot(batchnorm_forward(in[0], p, true), r);
  };
  gc.analytic = [r, params](const std::vector<Tensor>& in) {
    auto p = params(in);
    BatchNormCache cache;
    batchnorm_forward(in[0], p, true, &cache);
    auto g = batchnorm_backward(p, cache, r);
    return std::vector<Tensor>{g.grad_x, g.grad_gamma, g.grad_beta};
  };
  return gc;
}

GradCase softmax_ce_case(std::uint64_t seed) {
  Rng rng(stream_key(seed, 104));
  GradCase gc;
  gc.op = "softmax_ce";
  gc.names = {"logits"};
  gc.inputs = {random_tensor({4, 5, 1, 1}, rng, -3.0, 3.0)};
  std::vector<int> labels(4);
  for (int& l : labels) l = static_cast<int>(rng.below(5));
  gc.loss = [labels](const std::vector<Tensor>& in) {
    return softmax_cross_entropy(in[0], labels).loss;
  };
  gc.analytic = [labels](const std::vector<Tensor>& in) {
    return std::vector<Tensor>{softmax_cross_entropy(in[0], labels).grad_logits};
  };
  return gc;
}

GradCase maxpool_case(std::uint64_t seed) {
  Rng rng(stream_key(seed, 105));
  GradCase gc;
  gc.op = "maxpool";
  gc.names = {"x"};
  gc.inputs = {random_tensor({2, 2, 4, 4}, rng)};
  const PoolSpec spec{2, 2, 0};
  const Tensor r = random_tensor({2, 2, 2, 2}, rng);
  gc.loss = [spec, r](const std::vector<Tensor>& in) {
    return dot(maxpool_forward(in[0], spec), r);
  };
  gc.analytic = [spec, r](const std::vector<Tensor>& in) {
    MaxPoolCache cache;
    maxpool_forward(in[0], spec, &cache);
    return std::vector<Tensor>{maxpool_backward(cache, r)};
  };
  return gc;
}

GradCase avgpool_case(std::uint64_t seed) {
  Rng rng(stream_key(seed, 106));
  GradCase gc;
  gc.op = "avgpool";
  gc.names = {"x"};
  gc.inputs = {random_tensor({2, 2, 4, 4}, rng)};
  const PoolSpec spec{3, 1, 1};
  const Tensor r = random_tensor({2, 2, 4, 4}, rng);
  gc.loss = [spec, r](const std::vector<Tensor>& in) {
    return dot(avgpool_forward(in[0], spec), r);
  };
  gc.analytic = [spec, r](const std::vector<Tensor>& in) {
    return std::vector<Tensor>{avgpool_backward(in[0].shape(), spec, r)};
  };
  return gc;
}

namespace {

GradCase make_onedconv_case(std::uint64_t seed, std::size_t stride,
                            double kernel_grad_scale) {
  Rng rng(stream_key(seed, 107));
  ConvSpec spec{2, 3, 3, stride, std::nullopt, true};
  const std::size_t out = spec.out_extent(6);
  GradCase gc;
  gc.op = "onedconv_s" + std::to_string(stride);
  gc.names = {"x", "kernel", "bias", "shape_kernel", "shape_bias"};
  gc.inputs = {random_tensor({1, 2, 6, 6}, rng),
               random_tensor({3, 2, 3, 3}, rng),
               random_tensor(vector_shape(3), rng),
               random_tensor({2, 2, 3, 3}, rng, -0.01, 0.01),
               Tensor(vector_shape(2), 0.3)};
  const Tensor r = random_tensor({1, 3, out, out}, rng);
  auto split = [](const std::vector<Tensor>& in) {
    ConvWeights w{in[1], in[2]};
    ShapeConvWeights sw;
    sw.kernel = in[3];
    sw.bias = in[4];
    return std::pair{w, sw};
  };
  gc.loss = [spec, r, split](const std::vector<Tensor>& in) {
    auto [w, sw] = split(in);
    return dot(onedconv_forward(in[0], spec, w, sw).y, r);
  };
  gc.analytic = [spec, r, split, kernel_grad_scale](
                    const std::vector<Tensor>& in) {
    auto [w, sw] = split(in);
    auto fwd = onedconv_forward(in[0], spec, w, sw);
    auto g = onedconv_backward(fwd.cache, r);
    return std::vector<Tensor>{g.grad_x, scale(g.grad_kernel, kernel_grad_scale),
                               g.grad_bias, g.grad_shape_kernel,
                               g.grad_shape_bias};
  };
  return gc;
}

}  // namespace

GradCase onedconv_case(std::uint64_t seed, std::size_t stride) {
  return make_onedconv_case(seed, stride, 1.0);
}

GradCase corrupted_onedconv_case(std::uint64_t seed) {
  GradCase gc = make_onedconv_case(seed, 1, 2.0);
  gc.op = "onedconv_corrupted";
  return gc;
}

std::vector<NamedCase> standard_suite() {
  return {
      {"conv2d_k3_s1", [](std::uint64_t s) { return conv2d_case(s, 3, 1); }, 1e-6},
      {"conv2d_k5_s2", [](std::uint64_t s) { return conv2d_case(s, 5, 2); }, 1e-6},
      {"fc", fc_case, 1e-6},
      {"avgpool", avgpool_case, 1e-6},
      {"maxpool", maxpool_case, 1e-6},
      {"batchnorm", batchnorm_case, 1e-4},
      {"softmax_ce", softmax_ce_case, 1e-4},
      {"onedconv_s1", [](std::uint64_t s) { return onedconv_case(s, 1); }, 1e-4},
      {"onedconv_s2", [](std::uint64_t s) { return onedconv_case(s, 2); }, 1e-4},
  };
}

}  // namespace odc::gradcheck
