#include "evp/fft.hpp"

#include "evp/ops.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>

namespace evp {
namespace fft {
namespace {

void radix2(cplx* a, std::size_t n, const std::vector<cplx>& twiddles, bool inverse) {
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2, step = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const cplx w = inverse ? std::conj(twiddles[k * step]) : twiddles[k * step];
        const cplx u = a[i + k], v = a[i + k + half] * w;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

// Half a turn suffices for radix-2; the direct DFT needs the full circle.
std::vector<cplx> make_twiddles(std::size_t n, std::size_t count) {
  std::vector<cplx> t(count);
  for (std::size_t k = 0; k < t.size(); ++k) {
    t[k] = std::polar(1.0, -2.0 * std::numbers::pi * double(k) / double(n));
  }
  return t;
}

// Below this length a non-power-of-two transform is done as a direct DFT,
// which is both faster and rounds less than the chirp-z detour.
constexpr std::size_t kDirectMax = 32;

struct Plan {
  std::size_t n = 0;
  bool pow2 = false;
  bool direct = false;
  std::vector<cplx> twiddles;
  // Bluestein state: chirp w[k] = exp(-iπk²/n) and the padded transform of its
  // conjugate, both over the radix-2 length m.
  std::size_t m = 0;
  std::vector<cplx> chirp;
  std::vector<cplx> kernel_spectrum;
  std::vector<cplx> m_twiddles;

  explicit Plan(std::size_t len) : n(len), pow2(std::has_single_bit(len)), direct(!pow2 && len <= kDirectMax) {
    if (pow2 || direct) {
      twiddles = make_twiddles(n, direct ? n : n / 2);
      return;
    }
    m = std::bit_ceil(2 * n - 1);
    m_twiddles = make_twiddles(m, m / 2);
    chirp.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t k2 = (k * k) % (2 * n);
      chirp[k] = std::polar(1.0, -std::numbers::pi * double(k2) / double(n));
    }
    kernel_spectrum.assign(m, cplx(0));
    kernel_spectrum[0] = std::conj(chirp[0]);
    for (std::size_t k = 1; k < n; ++k) {
      kernel_spectrum[k] = kernel_spectrum[m - k] = std::conj(chirp[k]);
    }
    radix2(kernel_spectrum.data(), m, m_twiddles, false);
  }

  // Unnormalized forward transform (sign -).
  void forward(cplx* a) const {
    if (pow2) {
      radix2(a, n, twiddles, false);
      return;
    }
    if (direct) {
      std::vector<cplx> out(n, cplx(0));
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < n; ++j) out[k] += a[j] * twiddles[(j * k) % n];
      std::copy(out.begin(), out.end(), a);
      return;
    }
    std::vector<cplx> buf(m, cplx(0));
    for (std::size_t k = 0; k < n; ++k) buf[k] = a[k] * chirp[k];
    radix2(buf.data(), m, m_twiddles, false);
    for (std::size_t k = 0; k < m; ++k) buf[k] *= kernel_spectrum[k];
    radix2(buf.data(), m, m_twiddles, true);
    const double inv_m = 1.0 / double(m);
    for (std::size_t k = 0; k < n; ++k) a[k] = buf[k] * inv_m * chirp[k];
  }
};

std::shared_ptr<const Plan> plan_for(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, std::shared_ptr<const Plan>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[n];
  if (!slot) slot = std::make_shared<const Plan>(n);
  return slot;
}

}  // namespace

void transform(cplx* data, std::size_t n, bool inverse) {
  if (n <= 1) return;
  const auto plan = plan_for(n);
  if (!inverse) {
    plan->forward(data);
    return;
  }
  // Inverse via conjugation: ifft(x) = conj(fft(conj(x))) / n.
  for (std::size_t i = 0; i < n; ++i) data[i] = std::conj(data[i]);
  plan->forward(data);
  const double inv_n = 1.0 / double(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = std::conj(data[i]) * inv_n;
}

void transform(std::vector<cplx>& data, bool inverse) { transform(data.data(), data.size(), inverse); }

void transform_2d(std::vector<cplx>& data, Layout layout, bool inverse) {
  if (data.size() != layout.size()) {
    throw DimensionError("transform_2d: buffer of " + std::to_string(data.size()) +
                         " values does not match layout");
  }
  const std::size_t h = layout.h, w = layout.w, ch = layout.inner;
  const std::size_t ch_h = center(h), ch_w = center(w);
  std::vector<cplx> grid(h * w), tmp(h * w), line(std::max(h, w));
  for (std::size_t o = 0; o < layout.outer; ++o) {
    cplx* base = data.data() + o * h * w * ch;
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t i = 0; i < h * w; ++i) grid[i] = base[i * ch + c];
      if (inverse) {
        // Undo the centering: raw frequency (i, j) is stored at (i + c_h, j + c_w).
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) tmp[i * w + j] = grid[((i + ch_h) % h) * w + (j + ch_w) % w];
        grid.swap(tmp);
      }
      for (std::size_t i = 0; i < h; ++i) transform(grid.data() + i * w, w, inverse);
      for (std::size_t j = 0; j < w; ++j) {
        for (std::size_t i = 0; i < h; ++i) line[i] = grid[i * w + j];
        transform(line.data(), h, inverse);
        for (std::size_t i = 0; i < h; ++i) grid[i * w + j] = line[i];
      }
      if (!inverse) {
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) tmp[((i + ch_h) % h) * w + (j + ch_w) % w] = grid[i * w + j];
        grid.swap(tmp);
      }
      for (std::size_t i = 0; i < h * w; ++i) base[i * ch + c] = grid[i];
    }
  }
}

}  // namespace fft

namespace {

void check_layout(const Tensor& x, std::size_t expected, const fft::Layout& layout, const char* op) {
  if (expected != layout.size()) {
    throw DimensionError(std::string(op) + ": tensor " + to_string(x.shape()) + " does not match grid " +
                         std::to_string(layout.outer) + "x" + std::to_string(layout.h) + "x" +
                         std::to_string(layout.w) + "x" + std::to_string(layout.inner));
  }
}

// Forward centered transform of a real array, returned as (re, im) planes.
std::vector<cplx> forward_real(std::span<const double> x, fft::Layout layout) {
  std::vector<cplx> buf(x.begin(), x.end());
  fft::transform_2d(buf, layout, false);
  return buf;
}

Shape packed_shape(const Shape& shape) {
  Shape s{2};
  s.insert(s.end(), shape.begin(), shape.end());
  return s;
}

Tensor from_planes(const std::vector<cplx>& buf, const Shape& shape, DType dtype, bool with_imag) {
  const std::size_t n = buf.size();
  std::vector<double> v(with_imag ? 2 * n : n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = buf[i].real();
    if (with_imag) v[n + i] = buf[i].imag();
  }
  return Tensor::from_values(shape, v, dtype);
}

}  // namespace

Tensor fft2_packed(const Tensor& x, fft::Layout layout) {
  check_layout(x, x.numel(), layout, "fft2");
  const auto buf = forward_real(x.to_doubles(), layout);
  Tensor out = from_planes(buf, packed_shape(x.shape()), x.dtype(), true);
  check_finite(out, "fft2");
  if (needs_grad({&x})) {
    record(out, "fft2", {x}, [layout](TensorImpl& self, const std::vector<Tensor>& in) {
      dispatch(self.dtype, [&]<class T>() {
        const auto& g = std::get<std::vector<T>>(*self.grad);
        const std::size_t n = layout.size();
        // grad_x = Re(F^H · unshift(g_re + i·g_im)) where F^H is the unnormalized
        // inverse DFT, i.e. n·ifft.
        std::vector<cplx> buf(n);
        for (std::size_t i = 0; i < n; ++i) buf[i] = cplx(g[i], g[n + i]);
        fft::transform_2d(buf, layout, true);
        const double scale = double(layout.h * layout.w);
        auto gx = grad_slot<T>(in[0]);
        for (std::size_t i = 0; i < n; ++i) gx[i] += static_cast<T>(buf[i].real() * scale);
      });
    });
  }
  return out;
}

Tensor ifft2_real_packed(const Tensor& z, fft::Layout layout) {
  if (z.rank() < 2 || z.dim(0) != 2) {
    throw DimensionError("ifft2: expected packed spectrum [2, ...], got " + to_string(z.shape()));
  }
  const std::size_t n = z.numel() / 2;
  check_layout(z, n, layout, "ifft2");
  const auto v = z.to_doubles();
  std::vector<cplx> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = cplx(v[i], v[n + i]);
  fft::transform_2d(buf, layout, true);
  Tensor out = from_planes(buf, Shape(z.shape().begin() + 1, z.shape().end()), z.dtype(), false);
  check_finite(out, "ifft2");
  if (needs_grad({&z})) {
    record(out, "ifft2", {z}, [layout, n](TensorImpl& self, const std::vector<Tensor>& in) {
      dispatch(self.dtype, [&]<class T>() {
        const auto& g = std::get<std::vector<T>>(*self.grad);
        // With B = ifft∘unshift, y = Re(B z): grad_re = Re(B^H g), grad_im = Im(B^H g),
        // and B^H g = shift(F g) / (H·W).
        std::vector<cplx> buf(g.begin(), g.end());
        fft::transform_2d(buf, layout, false);
        const double scale = 1.0 / double(layout.h * layout.w);
        auto gz = grad_slot<T>(in[0]);
        for (std::size_t i = 0; i < n; ++i) {
          gz[i] += static_cast<T>(buf[i].real() * scale);
          gz[n + i] += static_cast<T>(buf[i].imag() * scale);
        }
      });
    });
  }
  return out;
}

namespace {

fft::Layout image_layout(const Tensor& grid, const char* op) {
  if (grid.rank() == 2) return {1, grid.dim(0), grid.dim(1), 1};
  if (grid.rank() == 3) return {grid.dim(0), grid.dim(1), grid.dim(2), 1};
  throw DimensionError(std::string(op) + ": expected C×H×W, got " + to_string(grid.shape()));
}

}  // namespace

ComplexGrid fft2(const Tensor& grid) {
  const auto layout = image_layout(grid, "fft2");
  Tensor packed = fft2_packed(grid, layout);
  Shape shape{layout.outer, layout.h, layout.w};
  return {reshape(slice(packed, 0, 0, 1), shape), reshape(slice(packed, 0, 1, 2), shape)};
}

Tensor ifft2(const ComplexGrid& spectrum) {
  if (spectrum.real.shape() != spectrum.imag.shape()) {
    throw DimensionError("ifft2: real " + to_string(spectrum.real.shape()) + " and imaginary " +
                         to_string(spectrum.imag.shape()) + " planes differ");
  }
  const auto layout = image_layout(spectrum.real, "ifft2");
  // Residual check on the full complex inverse.
  const auto re = spectrum.real.to_doubles();
  const auto im = spectrum.imag.to_doubles();
  std::vector<cplx> buf(re.size());
  for (std::size_t i = 0; i < re.size(); ++i) buf[i] = cplx(re[i], im[i]);
  fft::transform_2d(buf, layout, true);
  double max_re = 0, max_im = 0;
  for (const cplx& c : buf) {
    max_re = std::max(max_re, std::abs(c.real()));
    max_im = std::max(max_im, std::abs(c.imag()));
  }
  if (!(max_im <= 1e-5 * std::max(1.0, max_re))) {
    throw NumericError("ifft2: residual imaginary part " + std::to_string(max_im) +
                       " exceeds tolerance; spectrum is not conjugate-symmetric");
  }
  Shape packed{1};
  packed.insert(packed.end(), spectrum.real.shape().begin(), spectrum.real.shape().end());
  Tensor z = concat({reshape(spectrum.real, packed), reshape(spectrum.imag, packed)}, 0);
  return ifft2_real_packed(z, layout);
}

}  // namespace evp
