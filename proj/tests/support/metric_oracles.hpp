#pragma once

// Loop-by-loop reference implementations of the eight foreground-map metrics,
// written independently of src/metrics.cpp: 2-D indexing throughout, explicit
// border padding for the smoothing, an exhaustive split search instead of
// rounding, and ROC points integrated in threshold order without sorting.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace oracle {

using Grid2 = std::vector<std::vector<double>>;

constexpr double kEps = std::numeric_limits<double>::epsilon();

inline Grid2 to_grid(const std::vector<double>& v, std::size_t h, std::size_t w) {
  Grid2 g(h, std::vector<double>(w));
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) g[i][j] = v[i * w + j];
  return g;
}

struct Counts {
  double tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Counts count(const Grid2& p, const Grid2& g, double t) {
  Counts c;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p[i].size(); ++j) {
      const bool pp = p[i][j] >= t;
      const bool gg = g[i][j] > 0.5;
      c.tp += pp && gg;
      c.fp += pp && !gg;
      c.fn += !pp && gg;
      c.tn += !pp && !gg;
    }
  return c;
}

inline double fmeasure(const Counts& c, double beta2) {
  if (c.tp + c.fn == 0 && c.tp + c.fp == 0) return 1.0;
  const double prec = c.tp + c.fp > 0 ? c.tp / (c.tp + c.fp) : 0.0;
  const double rec = c.tp + c.fn > 0 ? c.tp / (c.tp + c.fn) : 0.0;
  const double den = beta2 * prec + rec;
  return den > 0 ? (1 + beta2) * prec * rec / den : 0.0;
}

inline double mae(const Grid2& p, const Grid2& g) {
  double s = 0, n = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p[i].size(); ++j) s += std::fabs(p[i][j] - g[i][j]), n += 1;
  return s / n;
}

inline double f1(const Grid2& p, const Grid2& g) { return fmeasure(count(p, g, 0.5), 1.0); }

inline double ber(const Grid2& p, const Grid2& g) {
  const Counts c = count(p, g, 0.5);
  const double tpr = c.tp + c.fn > 0 ? c.tp / (c.tp + c.fn) : 1.0;
  const double tnr = c.tn + c.fp > 0 ? c.tn / (c.tn + c.fp) : 1.0;
  return 100.0 * (1.0 - 0.5 * (tpr + tnr));
}

inline double iou(const Grid2& p, const Grid2& g) {
  const Counts c = count(p, g, 0.5);
  return c.tp + c.fp + c.fn == 0 ? 1.0 : c.tp / (c.tp + c.fp + c.fn);
}

inline double max_f(const Grid2& p, const Grid2& g) {
  double best = 0;
  for (int k = 0; k < 256; ++k) best = std::max(best, fmeasure(count(p, g, k / 255.0), 0.3));
  return best;
}

inline double auc(const Grid2& p, const Grid2& g) {
  const Counts all = count(p, g, 0.0);
  const double pos = all.tp + all.fn, neg = all.fp + all.tn;
  if (pos == 0 || neg == 0) return 1.0;
  // Highest threshold first: the ROC walks from (0,0) towards (1,1).
  double x0 = 0, y0 = 0, area = 0;
  for (int k = 255; k >= -1; --k) {
    double x = 1, y = 1;
    if (k >= 0) {
      const Counts c = count(p, g, k / 255.0);
      x = c.fp / neg;
      y = c.tp / pos;
    }
    area += (x - x0) * (y + y0) / 2;
    x0 = x;
    y0 = y;
  }
  return area;
}

inline double weighted_f(const Grid2& p, const Grid2& g) {
  const long h = long(p.size()), w = long(p[0].size());
  // replicate-padded error map
  Grid2 pad(h + 6, std::vector<double>(w + 6));
  for (long i = -3; i < h + 3; ++i)
    for (long j = -3; j < w + 3; ++j) {
      const long ci = std::min(std::max(i, 0L), h - 1), cj = std::min(std::max(j, 0L), w - 1);
      pad[i + 3][j + 3] = std::fabs(p[ci][cj] - g[ci][cj]);
    }
  double kernel[7][7], ks = 0;
  for (int a = 0; a < 7; ++a)
    for (int b = 0; b < 7; ++b) ks += kernel[a][b] = std::exp(-((a - 3) * (a - 3) + (b - 3) * (b - 3)) / 50.0);
  double tpw = 0, fpw = 0, fnw = 0, fg = 0;
  for (long i = 0; i < h; ++i)
    for (long j = 0; j < w; ++j) {
      double ea = 0;
      for (int a = 0; a < 7; ++a)
        for (int b = 0; b < 7; ++b) ea += kernel[a][b] / ks * pad[i + a][j + b];
      const double e = pad[i + 3][j + 3];
      if (g[i][j] > 0.5) {
        fg += 1;
        tpw += 1 - std::min(e, ea);
        fnw += std::min(e, ea);
      } else {
        fpw += ea;
      }
    }
  if (fg == 0) return fpw == 0 ? 1.0 : 0.0;
  const double prec = tpw + fpw > 0 ? tpw / (tpw + fpw) : 0.0;
  const double rec = tpw + fnw > 0 ? tpw / (tpw + fnw) : 0.0;
  return prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
}

namespace detail {

inline double object(const std::vector<double>& vals) {
  if (vals.empty()) return 0.0;
  double mu = 0;
  for (double v : vals) mu += v;
  mu /= double(vals.size());
  double var = 0;
  for (double v : vals) var += (v - mu) * (v - mu);
  const double sd = std::sqrt(var / (double(vals.size()) - 1 + kEps));
  return 2 * mu / (mu * mu + 1 + sd + kEps);
}

inline double ssim(const Grid2& p, const Grid2& g, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
  std::vector<double> xs, ys;
  for (std::size_t i = r0; i < r1; ++i)
    for (std::size_t j = c0; j < c1; ++j) xs.push_back(p[i][j]), ys.push_back(g[i][j]);
  const double n = double(xs.size());
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) mx += xs[k], my += ys[k];
  mx /= n, my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    sxx += (xs[k] - mx) * (xs[k] - mx);
    syy += (ys[k] - my) * (ys[k] - my);
    sxy += (xs[k] - mx) * (ys[k] - my);
  }
  sxx /= n - 1 + kEps, syy /= n - 1 + kEps, sxy /= n - 1 + kEps;
  const double a = 4 * mx * my * sxy, b = (mx * mx + my * my) * (sxx + syy);
  if (a != 0) return a / (b + kEps);
  return b == 0 ? 1.0 : 0.0;
}

// Boundary in [0, n] nearest the centroid; on a tie the one nearer n/2.
inline std::size_t split(double centroid, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t b = 1; b <= n; ++b) {
    const double d = std::fabs(double(b) - centroid), db = std::fabs(double(best) - centroid);
    if (d < db || (d == db && std::fabs(double(b) - n / 2.0) < std::fabs(double(best) - n / 2.0))) best = b;
  }
  return best;
}

}  // namespace detail

inline double s_measure(const Grid2& p, const Grid2& g) {
  const std::size_t h = p.size(), w = p[0].size();
  double fgc = 0, mp = 0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) fgc += g[i][j], mp += p[i][j];
  const double u = fgc / double(h * w);
  mp /= double(h * w);
  if (u == 0) return 1 - mp;
  if (u == 1) return mp;
  std::vector<double> fgv, bgv;
  double cx = 0, cy = 0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      if (g[i][j] > 0.5) {
        fgv.push_back(p[i][j]);
        cx += j + 0.5;
        cy += i + 0.5;
      } else {
        bgv.push_back(1 - p[i][j]);
      }
    }
  const double so = u * detail::object(fgv) + (1 - u) * detail::object(bgv);
  const std::size_t bx = detail::split(cx / fgc, w), by = detail::split(cy / fgc, h);
  double sr = 0;
  const std::size_t rs[3] = {0, by, h}, cs[3] = {0, bx, w};
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      const double cells = double((rs[a + 1] - rs[a]) * (cs[b + 1] - cs[b]));
      if (cells > 0) sr += cells / double(h * w) * detail::ssim(p, g, rs[a], rs[a + 1], cs[b], cs[b + 1]);
    }
  return std::clamp(0.5 * so + 0.5 * sr, 0.0, 1.0);
}

inline double e_measure(const Grid2& p, const Grid2& g) {
  const std::size_t h = p.size(), w = p[0].size();
  const double n = double(h * w);
  double u = 0, mp = 0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) u += g[i][j], mp += p[i][j];
  u /= n;
  mp /= n;
  double s = 0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      if (u == 0) {
        s += 1 - p[i][j];
      } else if (u == 1) {
        s += p[i][j];
      } else {
        const double a = p[i][j] - mp, b = g[i][j] - u;
        const double xi = 2 * a * b / (a * a + b * b + kEps);
        s += (1 + xi) * (1 + xi) / 4;
      }
    }
  return std::clamp(s / n, 0.0, 1.0);
}

}  // namespace oracle
