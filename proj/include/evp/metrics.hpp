#pragma once

// Foreground-map evaluation. Predictions are probabilities in [0, 1]; ground
// truth is binary. All computations are in double.
//
// Conventions:
//   - a pixel is predicted positive iff pred ≥ threshold;
//   - precision / recall are 0 when their denominator is 0, except that an
//     F-score is 1 when there are neither positives nor predicted positives;
//   - TPR / TNR are 1 when their class is empty (no sample can be missed);
//   - F1 and BER use threshold 0.5; max-F scans thresholds k/255, k = 0..255;
//   - AUC integrates the ROC polyline through the same 256 thresholds plus
//     the endpoints (0,0) and (1,1) with the trapezoid rule. With an empty
//     class AUC is 1.

#include <cstddef>
#include <vector>

#include "evp/tensor.hpp"

namespace evp {

struct Map {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<double> v;  // row-major

  static Map from_tensor(const Tensor& t);  // [H, W] or [1, H, W]
  double operator()(std::size_t i, std::size_t j) const { return v[i * w + j]; }
  std::size_t size() const { return v.size(); }
};

struct ConfusionCounts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
};

struct MetricsReport {
  double mae = 0;
  double f_beta_max = 0;
  double f_beta_weighted = 0;
  double f1 = 0;
  double auc = 0;
  double ber = 0;
  double s_measure = 0;
  double e_measure = 0;
  double iou = 0;
};

struct StructureParts {
  double object = 0;  // S_o
  double region = 0;  // S_r
  double value = 0;   // 0.5·S_o + 0.5·S_r, clamped to [0, 1] (degenerate masks handled separately)
};

/// Throws std::invalid_argument on shape mismatch, non-binary gt or pred outside [0, 1].
void validate_maps(const Map& pred, const Map& gt);

ConfusionCounts confusion(const Map& pred, const Map& gt, double threshold);

double f_score(const ConfusionCounts& c, double beta2);
double mae(const Map& pred, const Map& gt);
double f1_score(const Map& pred, const Map& gt);
double ber(const Map& pred, const Map& gt);
double f_beta_max(const Map& pred, const Map& gt, double beta2 = 0.3);
double auc(const Map& pred, const Map& gt);
/// Errors E = |pred − gt| are smoothed by a normalized 7×7 Gaussian (σ = 5,
/// replicated borders) into EA. Foreground errors are min(E, EA), background
/// errors EA; TP_w = Σ_fg (1 − E_w), FP_w = Σ_bg E_w, FN_w = Σ_fg E_w, β² = 1.
double weighted_f(const Map& pred, const Map& gt);
/// Structure measure with α = 0.5: object-aware term and four-region SSIM
/// term split at the foreground centroid.
StructureParts structure_parts(const Map& pred, const Map& gt);
double s_measure(const Map& pred, const Map& gt);
/// Enhanced alignment measure on the continuous prediction.
double e_measure(const Map& pred, const Map& gt);
/// IoU of (pred ≥ 0.5) with gt; 1 when both are empty.
double iou(const Map& pred, const Map& gt);

MetricsReport evaluate(const Map& pred, const Map& gt);
/// Field-wise mean.
MetricsReport mean_report(const std::vector<MetricsReport>& reports);

}  // namespace evp
