#pragma once

// The registered gradient checks: every differentiable primitive plus the
// composites (transformer block, both adaptors, Fourier MLP, decoder, losses).
// Each case builds small f64 inputs from a fixed seed.

#include <functional>
#include <string>
#include <vector>

#include "evp/gradcheck.hpp"

namespace evp {

struct GradCase {
  std::string name;
  std::function<GradCheckResult()> run;
};

std::vector<GradCase> gradient_suite();

}  // namespace evp
