#include "evp/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace evp {
namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

double safe_div(double num, double den) { return den > 0 ? num / den : 0.0; }

double rate(std::size_t hit, std::size_t miss) {
  return hit + miss == 0 ? 1.0 : double(hit) / double(hit + miss);
}

double foreground_fraction(const Map& gt) {
  double s = 0;
  for (double g : gt.v) s += g;
  return s / double(gt.size());
}

}  // namespace

Map Map::from_tensor(const Tensor& t) {
  if (t.rank() == 2) return {t.dim(0), t.dim(1), t.to_doubles()};
  if (t.rank() == 3 && t.dim(0) == 1) return {t.dim(1), t.dim(2), t.to_doubles()};
  throw DimensionError("expected an [H, W] map, got " + to_string(t.shape()));
}

void validate_maps(const Map& pred, const Map& gt) {
  if (pred.h != gt.h || pred.w != gt.w || pred.size() != gt.size() || pred.size() != pred.h * pred.w) {
    throw std::invalid_argument("prediction and ground truth sizes differ");
  }
  if (pred.size() == 0) throw std::invalid_argument("empty map");
  for (double g : gt.v)
    if (g != 0.0 && g != 1.0) throw std::invalid_argument("ground truth is not binary");
  for (double p : pred.v)
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("prediction outside [0, 1]");
}

ConfusionCounts confusion(const Map& pred, const Map& gt, double threshold) {
  validate_maps(pred, gt);
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.v[i] >= threshold, g = gt.v[i] == 1.0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double f_score(const ConfusionCounts& c, double beta2) {
  if (c.tp + c.fn == 0 && c.tp + c.fp == 0) return 1.0;
  const double precision = safe_div(double(c.tp), double(c.tp + c.fp));
  const double recall = safe_div(double(c.tp), double(c.tp + c.fn));
  return safe_div((1 + beta2) * precision * recall, beta2 * precision + recall);
}

double mae(const Map& pred, const Map& gt) {
  validate_maps(pred, gt);
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred.v[i] - gt.v[i]);
  return s / double(pred.size());
}

double f1_score(const Map& pred, const Map& gt) { return f_score(confusion(pred, gt, 0.5), 1.0); }

double ber(const Map& pred, const Map& gt) {
  const ConfusionCounts c = confusion(pred, gt, 0.5);
  return 100.0 * (1.0 - 0.5 * (rate(c.tp, c.fn) + rate(c.tn, c.fp)));
}

double f_beta_max(const Map& pred, const Map& gt, double beta2) {
  validate_maps(pred, gt);
  double best = 0;
  for (int k = 0; k <= 255; ++k) best = std::max(best, f_score(confusion(pred, gt, k / 255.0), beta2));
  return best;
}

double auc(const Map& pred, const Map& gt) {
  validate_maps(pred, gt);
  double pos = 0;
  for (double g : gt.v) pos += g;
  const double neg = double(gt.size()) - pos;
  if (pos == 0 || neg == 0) return 1.0;
  std::vector<std::pair<double, double>> roc{{0.0, 0.0}, {1.0, 1.0}};  // (FPR, TPR)
  for (int k = 0; k < 256; ++k) {
    const ConfusionCounts c = confusion(pred, gt, k / 255.0);
    roc.emplace_back(double(c.fp) / neg, double(c.tp) / pos);
  }
  std::sort(roc.begin(), roc.end());
  double area = 0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    area += (roc[i].first - roc[i - 1].first) * 0.5 * (roc[i].second + roc[i - 1].second);
  }
  return area;
}

double weighted_f(const Map& pred, const Map& gt) {
  validate_maps(pred, gt);
  const std::size_t h = pred.h, w = pred.w;
  constexpr int r = 3;
  constexpr double sigma = 5.0;
  std::array<double, 7 * 7> kernel{};
  double ksum = 0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const double v = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      kernel[(dy + r) * 7 + dx + r] = v;
      ksum += v;
    }
  for (double& v : kernel) v /= ksum;

  std::vector<double> e(pred.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = std::abs(pred.v[i] - gt.v[i]);
  const auto clampi = [](long v, std::size_t n) { return std::size_t(std::clamp<long>(v, 0, long(n) - 1)); };
  double tpw = 0, fpw = 0, fnw = 0, fg = 0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double ea = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
          ea += kernel[(dy + r) * 7 + dx + r] * e[clampi(long(i) + dy, h) * w + clampi(long(j) + dx, w)];
      const std::size_t k = i * w + j;
      if (gt.v[k] == 1.0) {
        const double ew = std::min(e[k], ea);
        tpw += 1.0 - ew;
        fnw += ew;
        fg += 1;
      } else {
        fpw += ea;
      }
    }
  if (fg == 0) return fpw == 0 ? 1.0 : 0.0;
  const double precision = safe_div(tpw, tpw + fpw);
  const double recall = safe_div(tpw, tpw + fnw);
  return safe_div(2 * precision * recall, precision + recall);
}

namespace {

// Similarity of a region's values to 1: 2μ / (μ² + 1 + σ + eps), sample σ.
double object_score(const Map& x, const Map& region) {
  double n = 0, s = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (region.v[i] == 1.0) s += x.v[i], n += 1;
  if (n == 0) return 0.0;
  const double mu = s / n;
  double var = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (region.v[i] == 1.0) var += (x.v[i] - mu) * (x.v[i] - mu);
  const double sigma = std::sqrt(var / (n - 1 + kEps));
  return 2.0 * mu / (mu * mu + 1.0 + sigma + kEps);
}

double ssim_block(const Map& pred, const Map& gt, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
  const double n = double((r1 - r0) * (c1 - c0));
  double mx = 0, my = 0;
  for (std::size_t i = r0; i < r1; ++i)
    for (std::size_t j = c0; j < c1; ++j) mx += pred(i, j), my += gt(i, j);
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = r0; i < r1; ++i)
    for (std::size_t j = c0; j < c1; ++j) {
      const double dx = pred(i, j) - mx, dy = gt(i, j) - my;
      sxx += dx * dx;
      syy += dy * dy;
      sxy += dx * dy;
    }
  sxx /= (n - 1 + kEps);
  syy /= (n - 1 + kEps);
  sxy /= (n - 1 + kEps);
  const double alpha = 4 * mx * my * sxy;
  const double beta = (mx * mx + my * my) * (sxx + syy);
  if (alpha != 0) return alpha / (beta + kEps);
  return beta == 0 ? 1.0 : 0.0;
}

// Split position along an axis: the foreground centroid in continuous pixel
// coordinates (pixel k spans [k, k+1]), rounded to the nearest boundary with
// ties broken toward the middle of the axis so that mirroring the maps mirrors
// the split.
std::size_t split_at(double centroid, std::size_t n) {
  const double lo = std::floor(centroid), hi = std::ceil(centroid);
  double b;
  if (centroid - lo < hi - centroid) b = lo;
  else if (centroid - lo > hi - centroid) b = hi;
  else b = std::abs(lo - n / 2.0) <= std::abs(hi - n / 2.0) ? lo : hi;
  return std::size_t(std::clamp(b, 0.0, double(n)));
}

}  // namespace

StructureParts structure_parts(const Map& pred, const Map& gt) {
  validate_maps(pred, gt);
  StructureParts parts;
  const double u = foreground_fraction(gt);
  Map fg = pred, bg = pred, not_gt = gt;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    fg.v[i] = pred.v[i] * gt.v[i];
    bg.v[i] = (1 - pred.v[i]) * (1 - gt.v[i]);
    not_gt.v[i] = 1 - gt.v[i];
  }
  parts.object = u * object_score(fg, gt) + (1 - u) * object_score(bg, not_gt);

  const std::size_t h = gt.h, w = gt.w;
  double area = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      if (gt(i, j) == 1.0) area += 1, sx += j + 0.5, sy += i + 0.5;
  const std::size_t bx = area > 0 ? split_at(sx / area, w) : w / 2;
  const std::size_t by = area > 0 ? split_at(sy / area, h) : h / 2;
  const double total = double(h * w);
  const std::size_t rows[3] = {0, by, h}, cols[3] = {0, bx, w};
  double region = 0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      const std::size_t cells = (rows[a + 1] - rows[a]) * (cols[b + 1] - cols[b]);
      if (cells == 0) continue;
      region += double(cells) / total * ssim_block(pred, gt, rows[a], rows[a + 1], cols[b], cols[b + 1]);
    }
  parts.region = region;
  parts.value = std::clamp(0.5 * parts.object + 0.5 * parts.region, 0.0, 1.0);
  return parts;
}

double s_measure(const Map& pred, const Map& gt) {
  validate_maps(pred, gt);
  const double u = foreground_fraction(gt);
  double mean_pred = 0;
  for (double p : pred.v) mean_pred += p;
  mean_pred /= double(pred.size());
  if (u == 0) return 1.0 - mean_pred;
  if (u == 1) return mean_pred;
  return structure_parts(pred, gt).value;
}

double e_measure(const Map& pred, const Map& gt) {
  validate_maps(pred, gt);
  const double u = foreground_fraction(gt);
  const double n = double(pred.size());
  double score = 0;
  if (u == 0 || u == 1) {
    for (double p : pred.v) score += u == 0 ? 1.0 - p : p;
  } else {
    double mp = 0;
    for (double p : pred.v) mp += p;
    mp /= n;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double ap = pred.v[i] - mp, ag = gt.v[i] - u;
      const double align = 2 * ap * ag / (ap * ap + ag * ag + kEps);
      score += (align + 1) * (align + 1) / 4;
    }
  }
  return std::clamp(score / n, 0.0, 1.0);
}

double iou(const Map& pred, const Map& gt) {
  const ConfusionCounts c = confusion(pred, gt, 0.5);
  const std::size_t uni = c.tp + c.fp + c.fn;
  return uni == 0 ? 1.0 : double(c.tp) / double(uni);
}

MetricsReport evaluate(const Map& pred, const Map& gt) {
  MetricsReport r;
  r.mae = mae(pred, gt);
  r.f_beta_max = f_beta_max(pred, gt);
  r.f_beta_weighted = weighted_f(pred, gt);
  r.f1 = f1_score(pred, gt);
  r.auc = auc(pred, gt);
  r.ber = ber(pred, gt);
  r.s_measure = s_measure(pred, gt);
  r.e_measure = e_measure(pred, gt);
  r.iou = iou(pred, gt);
  return r;
}

MetricsReport mean_report(const std::vector<MetricsReport>& reports) {
  MetricsReport m;
  if (reports.empty()) return m;
  for (const auto& r : reports) {
    m.mae += r.mae;
    m.f_beta_max += r.f_beta_max;
    m.f_beta_weighted += r.f_beta_weighted;
    m.f1 += r.f1;
    m.auc += r.auc;
    m.ber += r.ber;
    m.s_measure += r.s_measure;
    m.e_measure += r.e_measure;
    m.iou += r.iou;
  }
  const double n = double(reports.size());
  m.mae /= n;
  m.f_beta_max /= n;
  m.f_beta_weighted /= n;
  m.f1 /= n;
  m.auc /= n;
  m.ber /= n;
  m.s_measure /= n;
  m.e_measure /= n;
  m.iou /= n;
  return m;
}

}  // namespace evp
