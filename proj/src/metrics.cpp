#include "demr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "demr/evidential.hpp"

namespace demr {

std::vector<Detection> nms(const std::vector<Detection>& dets,
                           double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
    throw ValidationError("nms: threshold must be in (0,1]");
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });
  std::vector<Detection> kept;
  for (int i : order) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (iou_1d(dets[i].span, k.span) > iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(dets[i]);
  }
  return kept;
}

double recall_at_iou(const std::vector<std::vector<Detection>>& ranked,
                     const std::vector<MomentSpan>& gts, double tau) {
  if (ranked.size() != gts.size())
    throw ValidationError("recall_at_iou: sample count mismatch");
  if (ranked.empty()) throw ValidationError("recall_at_iou: empty evaluation");
  int hits = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i)
    if (!ranked[i].empty() && iou_1d(ranked[i][0].span, gts[i]) >= tau) ++hits;
  return static_cast<double>(hits) / ranked.size();
}

double average_precision(const std::vector<std::vector<Detection>>& ranked,
                         const std::vector<MomentSpan>& gts, double tau) {
  if (ranked.size() != gts.size())
    throw ValidationError("average_precision: sample count mismatch");
  struct Pooled {
    double score;
    int sample;
    int rank_in_sample;
  };
  std::vector<Pooled> pool;
  for (std::size_t s = 0; s < ranked.size(); ++s)
    for (std::size_t r = 0; r < ranked[s].size(); ++r)
      pool.push_back({ranked[s][r].score, static_cast<int>(s),
                      static_cast<int>(r)});
  std::stable_sort(pool.begin(), pool.end(), [](const Pooled& a,
                                                const Pooled& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.sample != b.sample) return a.sample < b.sample;
    return a.rank_in_sample < b.rank_in_sample;
  });

  const int n_gt = static_cast<int>(gts.size());
  std::vector<bool> matched(gts.size(), false);
  std::vector<double> precision, recall;
  int tp = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& p = pool[i];
    const Detection& d = ranked[p.sample][p.rank_in_sample];
    if (!matched[p.sample] && iou_1d(d.span, gts[p.sample]) >= tau) {
      matched[p.sample] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / (i + 1));
    recall.push_back(static_cast<double>(tp) / n_gt);
  }

  // precision envelope from the right, then sum recall increments
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

std::pair<double, double> mean_ap(
    const std::vector<std::vector<Detection>>& ranked,
    const std::vector<MomentSpan>& gts) {
  double sum = 0.0;
  double at075 = 0.0;
  int count = 0;
  for (int i = 0; i < 10; ++i) {
    const double tau = 0.5 + 0.05 * i;
    const double ap = average_precision(ranked, gts, tau);
    sum += ap;
    ++count;
    if (i == 5) at075 = ap;
  }
  return {sum / count, at075};
}

double mean_top1_iou(const std::vector<std::vector<Detection>>& ranked,
                     const std::vector<MomentSpan>& gts) {
  if (ranked.size() != gts.size())
    throw ValidationError("mean_top1_iou: sample count mismatch");
  if (ranked.empty()) throw ValidationError("mean_top1_iou: empty evaluation");
  double s = 0.0;
  for (std::size_t i = 0; i < ranked.size(); ++i)
    if (!ranked[i].empty()) s += iou_1d(ranked[i][0].span, gts[i]);
  return s / ranked.size();
}

MetricReport compute_metric_report(
    const std::vector<std::vector<Detection>>& ranked,
    const std::vector<MomentSpan>& gts) {
  MetricReport r;
  for (double tau : {0.3, 0.5, 0.7})
    r.r1_at[tau] = recall_at_iou(ranked, gts, tau);
  const auto [avg, at075] = mean_ap(ranked, gts);
  r.map_avg = avg;
  r.map_at_075 = at075;
  r.miou = mean_top1_iou(ranked, gts);
  return r;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = 0.5 * (i + j) + 1.0;  // 1-based average rank
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_error_uncertainty(const std::vector<double>& errors,
                                  const std::vector<double>& uncertainties) {
  if (errors.size() != uncertainties.size())
    throw ValidationError("spearman: length mismatch");
  if (errors.size() < 3)
    throw ValidationError("spearman: need at least 3 points");
  const auto ra = average_ranks(errors);
  const auto rb = average_ranks(uncertainties);
  const double n = static_cast<double>(ra.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;  // constant input
  return cov / std::sqrt(va * vb);
}

CalibrationReport calibration_report(const std::vector<double>& errors,
                                     const std::vector<double>& aleatoric,
                                     const std::vector<double>& epistemic,
                                     int n_bins) {
  if (errors.size() != aleatoric.size() || errors.size() != epistemic.size())
    throw ValidationError("calibration_report: length mismatch");
  CalibrationReport r;
  r.spearman_aleatoric = spearman_error_uncertainty(errors, aleatoric);
  r.spearman_epistemic = spearman_error_uncertainty(errors, epistemic);

  double max_err = 0.0;
  for (double e : errors) max_err = std::max(max_err, e);
  const double denom = std::max(max_err, kEps);
  r.bins.resize(n_bins);
  for (int b = 0; b < n_bins; ++b) {
    r.bins[b].err_lo = static_cast<double>(b) / n_bins;
    r.bins[b].err_hi = static_cast<double>(b + 1) / n_bins;
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    const double norm = errors[i] / denom;
    int b = std::min(n_bins - 1, static_cast<int>(norm * n_bins));
    r.bins[b].count += 1;
    r.bins[b].mean_aleatoric += aleatoric[i];
    r.bins[b].mean_epistemic += epistemic[i];
  }
  for (auto& bin : r.bins)
    if (bin.count > 0) {
      bin.mean_aleatoric /= bin.count;
      bin.mean_epistemic /= bin.count;
    }
  return r;
}

double population_variance(const std::vector<double>& xs) {
  if (xs.empty()) throw ValidationError("population_variance: empty input");
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= xs.size();
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return var / xs.size();
}

ModalityVariance modality_variance_from_level_means(
    const std::vector<double>& vis_level_means,
    const std::vector<double>& text_level_means) {
  ModalityVariance mv;
  mv.var_vis = population_variance(vis_level_means);
  mv.var_text = population_variance(text_level_means);
  mv.delta_var = std::fabs(mv.var_vis - mv.var_text);
  return mv;
}

}  // namespace demr
