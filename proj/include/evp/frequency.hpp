#pragma once

// Fixed spectrum masks and the high/low-frequency split of an image.
//
// M_h(τ) over a centered H×W spectrum is zero where
//   4·|(i − c_h)(j − c_w)| ≤ τ·H·W,   c = ⌊n/2⌋ (= (n−1)/2 for odd n),
// and one elsewhere. The zero-set is the low-frequency cross around DC; its
// area fraction tends to τ(1 − ln τ) for large grids.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "evp/tensor.hpp"

namespace evp {

struct FrequencyMask {
  std::size_t height = 0;
  std::size_t width = 0;
  double tau = 0;
  std::vector<std::uint8_t> bits;  // row-major, 1 = frequency kept

  std::uint8_t at(std::size_t i, std::size_t j) const { return bits[i * width + j]; }
  double zero_fraction() const;
  /// H×W tensor of the mask (or its complement).
  Tensor as_tensor(DType dtype = DType::f32, bool complement = false) const;
};

FrequencyMask make_hfc_mask(std::size_t height, std::size_t width, double tau);

/// Large-grid limit τ(1 − ln τ) of the zero fraction; 0 at τ = 0.
double analytic_zero_fraction(double tau);

struct FrequencyDecomposition {
  Tensor hfc;
  Tensor lfc;
};

/// Per-channel split of a C×H×W image with M_h(τ) and its complement 1 − M_h(τ).
FrequencyDecomposition extract_hfc(const Tensor& image, double tau);
/// High-frequency component only.
Tensor high_frequency(const Tensor& image, double tau);

/// Non-overlapping patches of a C×H×W tensor -> [N, ph·pw·C], patches in
/// row-major order and each flattened as (row, col, channel), the same order
/// the backbone's stage-0 patch embedding uses.
Tensor hfc_patches(const Tensor& hfc, std::size_t patch_h, std::size_t patch_w);

}  // namespace evp
