#pragma once

#include <map>
#include <vector>

#include "demr/span.hpp"

namespace demr {

struct Detection {
  MomentSpan span;
  double score;
};

struct MetricReport {
  std::map<double, double> r1_at;  // IoU threshold -> recall
  double map_avg = 0.0;            // mean AP over IoU 0.5..0.95 step 0.05
  double map_at_075 = 0.0;
  double miou = 0.0;
};

/// Greedy score-descending suppression; ties broken by ascending input
/// index. A detection is kept iff its IoU with every kept one is <= the
/// threshold. Output preserves keep order.
std::vector<Detection> nms(const std::vector<Detection>& dets,
                           double iou_threshold);

/// Fraction of samples whose first-ranked detection reaches IoU >= tau with
/// the ground truth. Sample without detections counts as a miss.
double recall_at_iou(const std::vector<std::vector<Detection>>& ranked,
                     const std::vector<MomentSpan>& gts, double tau);

/// Average precision at one IoU threshold over the score-ranked pooled
/// detections, one ground truth per sample; precision-envelope method.
double average_precision(const std::vector<std::vector<Detection>>& ranked,
                         const std::vector<MomentSpan>& gts, double tau);

/// (mean AP over IoU 0.5..0.95 step 0.05, AP at 0.75).
std::pair<double, double> mean_ap(
    const std::vector<std::vector<Detection>>& ranked,
    const std::vector<MomentSpan>& gts);

/// Mean IoU of the top detection against ground truth (0 for empty lists).
double mean_top1_iou(const std::vector<std::vector<Detection>>& ranked,
                     const std::vector<MomentSpan>& gts);

MetricReport compute_metric_report(
    const std::vector<std::vector<Detection>>& ranked,
    const std::vector<MomentSpan>& gts);

/// Spearman rank correlation with average ranks for ties; 0 by convention
/// when either input is constant. Lengths must match and be >= 3.
double spearman_error_uncertainty(const std::vector<double>& errors,
                                  const std::vector<double>& uncertainties);

struct CalibrationBin {
  double err_lo = 0.0;
  double err_hi = 0.0;
  int count = 0;
  double mean_aleatoric = 0.0;
  double mean_epistemic = 0.0;
};

struct CalibrationReport {
  double spearman_aleatoric = 0.0;
  double spearman_epistemic = 0.0;
  std::vector<CalibrationBin> bins;
};

/// errors are normalized to [0,1] by their max before binning/correlating.
CalibrationReport calibration_report(const std::vector<double>& errors,
                                     const std::vector<double>& aleatoric,
                                     const std::vector<double>& epistemic,
                                     int n_bins = 10);

struct ModalityVariance {
  double var_vis = 0.0;
  double var_text = 0.0;
  double delta_var = 0.0;
};

/// Population variance of the per-noise-level mean uncertainties, one value
/// per modality, plus their absolute difference.
ModalityVariance modality_variance_from_level_means(
    const std::vector<double>& vis_level_means,
    const std::vector<double>& text_level_means);

double population_variance(const std::vector<double>& xs);

}  // namespace demr
