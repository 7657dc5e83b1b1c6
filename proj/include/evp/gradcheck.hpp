#pragma once

// Finite-difference verification of reverse-mode gradients.

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "evp/tensor.hpp"

namespace evp {

/// Raised when the one-sided difference quotients at a coordinate disagree,
/// i.e. the function has a kink there and central differences are meaningless.
class NonDifferentiableError : public std::runtime_error {
 public:
  NonDifferentiableError(const std::string& input, std::size_t coordinate, double forward, double backward);
  std::string input;
  std::size_t coordinate;
};

struct GradCheckInput {
  std::string name;
  Tensor value;  // f64; perturbed in place during the check
};

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst_input;
  std::size_t worst_coordinate = 0;
  double analytic = 0;
  double numeric = 0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients of a weighted sum of f's outputs against
/// central differences with step h, coordinate by coordinate. The weights are
/// a fixed pseudo-random pattern in [0.5, 1.5] so that errors which cancel
/// under a plain sum (e.g. row-constant softmax gradients) still show up.
/// Relative error is |a − n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           std::vector<GradCheckInput> inputs, double h = 1e-6);

}  // namespace evp
