#pragma once

// Discrete Fourier transforms. Forward transforms are unnormalized; inverse
// transforms carry 1/n (1/(H·W) in 2-D). Any length is supported: powers of
// two use radix-2, short other lengths a direct DFT, and long ones Bluestein's
// chirp-z algorithm.
// All arithmetic is done in double regardless of the tensor dtype.
//
// 2-D spectra use the centered convention: after the forward transform the
// zero-frequency bin sits at (⌊H/2⌋, ⌊W/2⌋), and the inverse undoes the shift.

#include <complex>
#include <cstddef>
#include <vector>

#include "evp/tensor.hpp"

namespace evp {

using cplx = std::complex<double>;

namespace fft {

/// In-place 1-D transform of `n` contiguous values.
void transform(cplx* data, std::size_t n, bool inverse);
void transform(std::vector<cplx>& data, bool inverse);

/// Layout of a batch of 2-D grids inside a flat row-major array: `outer`
/// independent grids, each h×w, with `inner` interleaved channels per cell.
/// A C×H×W image is {C, H, W, 1}; tokens [B, h·w, c] are {B, h, w, c}.
struct Layout {
  std::size_t outer = 1, h = 1, w = 1, inner = 1;
  std::size_t size() const { return outer * h * w * inner; }
};

/// In-place centered 2-D transform of every grid in `data`.
void transform_2d(std::vector<cplx>& data, Layout layout, bool inverse);

/// Index of the bin holding frequency 0 along an axis of length n.
inline std::size_t center(std::size_t n) { return n / 2; }

}  // namespace fft

/// Real and imaginary planes of a spectrum, each C×H×W.
struct ComplexGrid {
  Tensor real;
  Tensor imag;
};

/// Differentiable centered 2-D FFT of a C×H×W tensor (H×W is treated as 1×H×W).
ComplexGrid fft2(const Tensor& grid);

/// Differentiable inverse of fft2. The spectrum is expected to be
/// conjugate-symmetric: a residual imaginary part above 1e-5 (relative to
/// max(1, max |real|)) raises NumericError; smaller residuals are dropped.
Tensor ifft2(const ComplexGrid& spectrum);

/// Differentiable forward transform of `x` laid out as `layout`. The result
/// has shape [2, x.shape...] with the real plane first.
Tensor fft2_packed(const Tensor& x, fft::Layout layout);

/// Real part of the inverse transform of a packed spectrum [2, ...]; the
/// result drops the leading axis. No residual check is made.
Tensor ifft2_real_packed(const Tensor& z, fft::Layout layout);

}  // namespace evp
