#include "evp/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

namespace evp {

std::string task_name(Task t) {
  switch (t) {
    case Task::texture: return "texture";
    case Task::blur: return "blur";
    case Task::shade: return "shade";
    case Task::camo: return "camo";
  }
  return "?";
}

Task parse_task(const std::string& name) {
  for (Task t : {Task::texture, Task::blur, Task::shade, Task::camo})
    if (task_name(t) == name) return t;
  throw std::invalid_argument("unknown task '" + name + "'");
}

SplitCounts SplitCounts::from_total(std::size_t n) {
  SplitCounts c;
  c.val = std::max<std::size_t>(1, n / 10);
  c.test = std::max<std::size_t>(1, n / 10);
  c.train = n - c.val - c.test;
  return c;
}

namespace {

constexpr double kPi = std::numbers::pi;
using Plane = std::vector<double>;

// Radial outline r(θ) = s·(1 + Σ a_k cos(kθ + φ_k)), k = 2..4.
struct Blob {
  std::array<double, 3> amp{}, phase{};
  double scale = 1, cx = 0, cy = 0;

  double radius(double theta) const {
    double r = 1;
    for (int k = 0; k < 3; ++k) r += amp[k] * std::cos((k + 2) * theta + phase[k]);
    return scale * r;
  }
};

std::vector<std::uint8_t> rasterize(const Blob& b, std::size_t size) {
  std::vector<std::uint8_t> m(size * size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double dx = x + 0.5 - b.cx, dy = y + 0.5 - b.cy;
      m[y * size + x] = std::hypot(dx, dy) <= b.radius(std::atan2(dy, dx)) ? 1 : 0;
    }
  return m;
}

std::vector<std::uint8_t> make_mask(std::size_t size, Rng& rng) {
  const double s = double(size);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Blob b;
    for (int k = 0; k < 3; ++k) {
      b.amp[k] = rng.uniform(-0.15, 0.15);
      b.phase[k] = rng.uniform(0, 2 * kPi);
    }
    // Area of the unit outline, ½∮r², by the midpoint rule.
    constexpr int steps = 720;
    double unit_area = 0, ext[4] = {0, 0, 0, 0};  // max extent in +x, −x, +y, −y
    for (int i = 0; i < steps; ++i) {
      const double t = 2 * kPi * (i + 0.5) / steps, r = b.radius(t);
      unit_area += 0.5 * r * r * (2 * kPi / steps);
      ext[0] = std::max(ext[0], r * std::cos(t));
      ext[1] = std::max(ext[1], -r * std::cos(t));
      ext[2] = std::max(ext[2], r * std::sin(t));
      ext[3] = std::max(ext[3], -r * std::sin(t));
    }
    const double target = rng.uniform(0.12, 0.38);
    b.scale = std::sqrt(target * s * s / unit_area);
    // Keep the outline inside [1, size − 1] in both axes.
    const double lo_x = 1 + b.scale * ext[1] + 1, hi_x = s - 1 - b.scale * ext[0] - 1;
    const double lo_y = 1 + b.scale * ext[3] + 1, hi_y = s - 1 - b.scale * ext[2] - 1;
    if (lo_x >= hi_x || lo_y >= hi_y) continue;
    b.cx = rng.uniform(lo_x, hi_x);
    b.cy = rng.uniform(lo_y, hi_y);
    auto mask = rasterize(b, size);
    std::size_t count = 0;
    bool border = false;
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        if (!mask[y * size + x]) continue;
        ++count;
        border |= x == 0 || y == 0 || x + 1 == size || y + 1 == size;
      }
    const double coverage = double(count) / (s * s);
    if (!border && coverage >= 0.10 && coverage <= 0.40) return mask;
  }
  throw std::runtime_error("synth: could not place a foreground blob");
}

// Sum of a few sinusoids with at most two cycles across the image.
Plane smooth_field(std::size_t size, Rng& rng, double amplitude) {
  Plane f(size * size, 0.0);
  for (int k = 0; k < 3; ++k) {
    const double fx = rng.uniform(-2, 2), fy = rng.uniform(-2, 2), ph = rng.uniform(0, 2 * kPi);
    const double a = amplitude * rng.uniform(0.3, 1.0) / 3;
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x)
        f[y * size + x] += a * std::sin(2 * kPi * (fx * x + fy * y) / double(size) + ph);
  }
  return f;
}

// Smooth colour background: per-channel base level plus a low-frequency field.
std::array<Plane, 3> smooth_background(std::size_t size, Rng& rng) {
  std::array<Plane, 3> bg;
  const Plane shared = smooth_field(size, rng, 0.25);
  for (auto& ch : bg) {
    const double base = rng.uniform(0.35, 0.65);
    const Plane own = smooth_field(size, rng, 0.08);
    ch.resize(size * size);
    for (std::size_t i = 0; i < ch.size(); ++i) ch[i] = base + shared[i] + own[i];
  }
  return bg;
}

Plane noise_texture(std::size_t size, Rng& rng, double amplitude) {
  Plane t(size * size);
  for (double& v : t) v = amplitude * rng.uniform(-1, 1);
  return t;
}

Plane gaussian_blur(const Plane& p, std::size_t size, double sigma) {
  const int r = int(std::ceil(3 * sigma));
  std::vector<double> k(2 * r + 1);
  double ks = 0;
  for (int i = -r; i <= r; ++i) ks += k[i + r] = std::exp(-i * i / (2 * sigma * sigma));
  for (double& v : k) v /= ks;
  const auto at = [&](const Plane& q, long y, long x) {
    const long n = long(size);
    return q[std::size_t(std::clamp(y, 0L, n - 1)) * size + std::size_t(std::clamp(x, 0L, n - 1))];
  };
  Plane tmp(p.size()), out(p.size());
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      double s = 0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * at(p, long(y), long(x) + i);
      tmp[y * size + x] = s;
    }
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      double s = 0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * at(tmp, long(y) + i, long(x));
      out[y * size + x] = s;
    }
  return out;
}

}  // namespace

Sample synth_sample(Task task, std::size_t size, Rng& rng) {
  const auto mask = make_mask(size, rng);
  const std::size_t n = size * size;
  std::array<Plane, 3> img = smooth_background(size, rng);
  switch (task) {
    case Task::texture: {
      const Plane tex = noise_texture(size, rng, rng.uniform(0.12, 0.2));
      for (auto& ch : img)
        for (std::size_t i = 0; i < n; ++i)
          if (mask[i]) ch[i] += tex[i];
      break;
    }
    case Task::blur: {
      const Plane tex = noise_texture(size, rng, 0.18);
      const Plane soft = gaussian_blur(tex, size, 1.5);
      for (auto& ch : img)
        for (std::size_t i = 0; i < n; ++i) ch[i] += mask[i] ? soft[i] : tex[i];
      break;
    }
    case Task::shade: {
      const double dark = rng.uniform(0.3, 0.6);
      for (auto& ch : img)
        for (std::size_t i = 0; i < n; ++i)
          if (mask[i]) ch[i] *= 1 - dark;
      break;
    }
    case Task::camo: {
      const double period = rng.uniform(3, 6), theta = rng.uniform(0, kPi), ph = rng.uniform(0, 2 * kPi);
      const double amp = 0.15;
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const std::size_t i = y * size + x;
          const double u = (std::cos(theta) * x + std::sin(theta) * y) * 2 * kPi / period + ph;
          const double g = amp * std::sin(u + (mask[i] ? kPi : 0.0));
          for (auto& ch : img) ch[i] += g;
        }
      break;
    }
  }
  std::vector<double> pixels(3 * n), m(n);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < n; ++i) pixels[c * n + i] = std::clamp(img[c][i], 0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) m[i] = mask[i];
  Sample s;
  s.image = Tensor::from_values({3, size, size}, pixels);
  s.mask = Tensor::from_values({size, size}, m);
  return s;
}

Dataset synth_dataset(Task task, SplitCounts counts, std::size_t size, std::uint64_t seed, std::size_t stride) {
  if (counts.total() < 4) throw std::invalid_argument("synth: need at least 4 samples");
  if (size < 32) throw std::invalid_argument("synth: image size must be at least 32");
  if (stride == 0 || size % stride != 0) {
    throw std::invalid_argument("synth: size " + std::to_string(size) + " not divisible by backbone stride " +
                                std::to_string(stride));
  }
  Dataset d;
  d.task = task_name(task);
  d.seed = seed;
  const std::pair<const char*, std::size_t> splits[] = {{"train", counts.train}, {"val", counts.val}, {"test", counts.test}};
  for (const auto& [split, n] : splits) {
    for (std::size_t i = 0; i < n; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "%s-%05zu", split, i);
      Rng rng = Rng::derive(seed, d.task + "/" + id);
      Sample s = synth_sample(task, size, rng);
      s.id = id;
      s.split = split;
      d.samples.push_back(std::move(s));
    }
  }
  return d;
}

}  // namespace evp
