#include "evp/frequency.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

#include "evp/fft.hpp"
#include "evp/ops.hpp"

namespace evp {
namespace {

// Exact test of  lhs ≤ τ·area  for a non-negative integer lhs and a double τ
// in (0, 1]. Writing τ = M·2^(e−53) with an integer mantissa M, the test is
// lhs·2^(53−e) ≤ M·area, evaluated in 128-bit integers. τ ≤ 1 keeps e ≤ 1.
bool le_scaled(std::uint64_t lhs, double tau, std::uint64_t area) {
  if (tau == 0.0) return lhs == 0;
  int e = 0;
  const double m = std::frexp(tau, &e);
  const auto mantissa = static_cast<unsigned __int128>(std::ldexp(m, 53));
  const int shift = 53 - e;
  const unsigned __int128 rhs = mantissa * area;
  // lhs·2^shift ≤ rhs  ⇔  lhs ≤ ⌊rhs / 2^shift⌋ for integer lhs.
  if (shift >= 128) return lhs == 0;
  return lhs <= (rhs >> shift);
}

}  // namespace

double FrequencyMask::zero_fraction() const {
  std::size_t zeros = 0;
  for (auto b : bits) zeros += b == 0;
  return double(zeros) / double(bits.size());
}

Tensor FrequencyMask::as_tensor(DType dtype, bool complement) const {
  std::vector<double> v(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) v[i] = complement ? 1.0 - bits[i] : bits[i];
  return Tensor::from_values({height, width}, v, dtype);
}

FrequencyMask make_hfc_mask(std::size_t height, std::size_t width, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("mask ratio tau must lie in [0, 1]");
  if (height < 2 || width < 2) throw DimensionError("frequency mask needs H, W >= 2");
  if (height > (1u << 20) || width > (1u << 20)) throw DimensionError("frequency mask too large");
  FrequencyMask mask{height, width, tau, std::vector<std::uint8_t>(height * width)};
  const auto ch = static_cast<std::int64_t>(height / 2), cw = static_cast<std::int64_t>(width / 2);
  const std::uint64_t area = std::uint64_t(height) * width;
  for (std::size_t i = 0; i < height; ++i) {
    const std::uint64_t di = static_cast<std::uint64_t>(std::llabs(std::int64_t(i) - ch));
    for (std::size_t j = 0; j < width; ++j) {
      const std::uint64_t dj = static_cast<std::uint64_t>(std::llabs(std::int64_t(j) - cw));
      mask.bits[i * width + j] = le_scaled(4 * di * dj, tau, area) ? 0 : 1;
    }
  }
  return mask;
}

double analytic_zero_fraction(double tau) {
  if (tau <= 0.0) return 0.0;
  return tau * (1.0 - std::log(tau));
}

namespace {

Tensor apply_mask(const ComplexGrid& z, const Tensor& mask) {
  return ifft2({mul(z.real, mask), mul(z.imag, mask)});
}

Shape image_shape(const Tensor& image) {
  if (image.rank() != 3) throw DimensionError("expected a C×H×W image, got " + to_string(image.shape()));
  return image.shape();
}

}  // namespace

FrequencyDecomposition extract_hfc(const Tensor& image, double tau) {
  const Shape shape = image_shape(image);
  const FrequencyMask mask = make_hfc_mask(shape[1], shape[2], tau);
  const ComplexGrid z = fft2(image);
  return {apply_mask(z, mask.as_tensor(image.dtype())),
          apply_mask(z, mask.as_tensor(image.dtype(), true))};
}

Tensor high_frequency(const Tensor& image, double tau) {
  const Shape shape = image_shape(image);
  const FrequencyMask mask = make_hfc_mask(shape[1], shape[2], tau);
  return apply_mask(fft2(image), mask.as_tensor(image.dtype()));
}

Tensor hfc_patches(const Tensor& hfc, std::size_t patch_h, std::size_t patch_w) {
  const Shape shape = image_shape(hfc);
  const std::size_t c = shape[0], h = shape[1], w = shape[2];
  if (patch_h == 0 || patch_w == 0 || h % patch_h != 0 || w % patch_w != 0) {
    throw DimensionError("hfc_patches: " + to_string(shape) + " not divisible by patch " +
                         std::to_string(patch_h) + "x" + std::to_string(patch_w));
  }
  const std::size_t gh = h / patch_h, gw = w / patch_w, row = patch_h * patch_w * c;
  Tensor out = Tensor::zeros({gh * gw, row}, hfc.dtype());
  dispatch(hfc.dtype(), [&]<class T>() {
    auto src = hfc.values<T>();
    auto dst = out.mutable_values<T>();
    for (std::size_t py = 0; py < gh; ++py)
      for (std::size_t px = 0; px < gw; ++px)
        for (std::size_t ky = 0; ky < patch_h; ++ky)
          for (std::size_t kx = 0; kx < patch_w; ++kx)
            for (std::size_t ch = 0; ch < c; ++ch)
              dst[(py * gw + px) * row + (ky * patch_w + kx) * c + ch] =
                  src[(ch * h + py * patch_h + ky) * w + px * patch_w + kx];
  });
  return out;
}

}  // namespace evp
