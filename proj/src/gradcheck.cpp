#include "evp/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "evp/ops.hpp"
#include "evp/rng.hpp"

namespace evp {

NonDifferentiableError::NonDifferentiableError(const std::string& in, std::size_t coord, double fwd, double bwd)
    : std::runtime_error("grad_check: non-differentiable point at " + in + "[" + std::to_string(coord) +
                         "], one-sided slopes " + std::to_string(fwd) + " vs " + std::to_string(bwd)),
      input(in),
      coordinate(coord) {}

namespace {

Tensor weights_for(const Shape& shape) {
  Rng rng(0x5eed);
  std::vector<double> w(numel(shape));
  for (double& v : w) v = rng.uniform(0.5, 1.5);
  return Tensor::from_values(shape, w, DType::f64);
}

// Σ w·(a − b). Differencing element-wise before the weighted sum keeps the
// summation's own rounding out of the difference quotient.
double weighted_diff(const Tensor& a, const Tensor& b, const Tensor& weights) {
  auto x = a.values<double>();
  auto y = b.values<double>();
  auto w = weights.values<double>();
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * w[i];
  return s;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           std::vector<GradCheckInput> inputs, double h) {
  if (!(h >= 1e-7 && h <= 1e-4)) throw std::invalid_argument("grad_check: step must lie in [1e-7, 1e-4]");
  std::vector<Tensor> args;
  for (auto& in : inputs) {
    if (in.value.dtype() != DType::f64) throw std::invalid_argument("grad_check: input " + in.name + " is not f64");
    in.value.clear_grad();
    in.value.set_requires_grad(true);
    args.push_back(in.value);
  }

  Tensor out = f(args);
  const Tensor weights = weights_for(out.shape());
  backward(sum(mul(out, weights)));

  std::vector<std::vector<double>> analytic;
  for (const auto& in : inputs) {
    analytic.push_back(in.value.has_grad() ? in.value.grad().to_doubles()
                                           : std::vector<double>(in.value.numel(), 0.0));
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  const Tensor y0 = f(args);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].value.mutable_values<double>();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double x = values[i];
      values[i] = x + h;
      const Tensor yp = f(args);
      values[i] = x - h;
      const Tensor ym = f(args);
      values[i] = x;
      const double numeric = weighted_diff(yp, ym, weights) / (2 * h);
      const double fwd = weighted_diff(yp, y0, weights) / h, bwd = weighted_diff(y0, ym, weights) / h;
      if (std::abs(fwd - bwd) > 1e-2 * std::max({1.0, std::abs(fwd), std::abs(bwd)})) {
        throw NonDifferentiableError(inputs[k].name, i, fwd, bwd);
      }
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++result.coordinates;
      if (result.coordinates == 1 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_input = inputs[k].name;
        result.worst_coordinate = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  for (auto& in : inputs) {
    in.value.clear_grad();
  }
  return result;
}

}  // namespace evp
