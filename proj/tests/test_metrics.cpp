#include <algorithm>
#include <cmath>
#include <numeric>

#include <doctest.h>

#include "demr/metrics.hpp"
#include "demr/rng.hpp"

using namespace demr;

namespace {

MomentSpan random_span(Rng& rng) {
  const double s = rng.uniform(0.0, 0.85);
  const double e = s + rng.uniform(0.05, std::min(0.6, 1.0 - s));
  return MomentSpan(s, e);
}

// Literal restatement of the greedy rule, kept independent of nms().
std::vector<Detection> nms_reference(const std::vector<Detection>& dets,
                                     double thr) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return dets[a].score != dets[b].score ? dets[a].score > dets[b].score
                                          : a < b;
  });
  std::vector<Detection> kept;
  for (int i : order) {
    bool ok = true;
    for (const auto& k : kept)
      ok = ok && iou_1d(dets[i].span, k.span) <= thr;
    if (ok) kept.push_back(dets[i]);
  }
  return kept;
}

// Exhaustive AP: precision at every prefix recomputed from scratch, envelope
// via literal max over suffixes.
double ap_reference(const std::vector<std::vector<Detection>>& ranked,
                    const std::vector<MomentSpan>& gts, double tau) {
  struct Row {
    double score;
    int sample, r;
  };
  std::vector<Row> rows;
  for (std::size_t s = 0; s < ranked.size(); ++s)
    for (std::size_t r = 0; r < ranked[s].size(); ++r)
      rows.push_back({ranked[s][r].score, (int)s, (int)r});
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.sample != b.sample) return a.sample < b.sample;
    return a.r < b.r;
  });
  std::vector<int> tp_flags;
  std::vector<bool> used(gts.size(), false);
  for (const auto& row : rows) {
    const bool tp = !used[row.sample] &&
                    iou_1d(ranked[row.sample][row.r].span, gts[row.sample]) >=
                        tau;
    if (tp) used[row.sample] = true;
    tp_flags.push_back(tp ? 1 : 0);
  }
  double ap = 0.0;
  int seen_tp = 0;
  for (std::size_t i = 0; i < tp_flags.size(); ++i) {
    if (!tp_flags[i]) continue;
    ++seen_tp;
    // envelope precision: best precision at any rank >= i
    double best = 0.0;
    int tp_at = 0;
    for (std::size_t j = 0; j < tp_flags.size(); ++j) {
      tp_at += tp_flags[j];
      if (j >= i) best = std::max(best, tp_at / static_cast<double>(j + 1));
    }
    ap += best / gts.size();
  }
  (void)seen_tp;
  return ap;
}

}  // namespace

TEST_CASE("iou_1d basics") {
  CHECK(iou_1d(MomentSpan(0.0, 0.5), MomentSpan(0.25, 0.75)) ==
        doctest::Approx(1.0 / 3.0));
  CHECK(iou_1d(MomentSpan(0.1, 0.4), MomentSpan(0.1, 0.4)) == 1.0);
  CHECK(iou_1d(MomentSpan(0.0, 0.2), MomentSpan(0.5, 0.9)) == 0.0);
  CHECK(iou_1d(MomentSpan(0.3, 0.3), MomentSpan(0.3, 0.3)) == 1.0);
  CHECK(iou_1d(MomentSpan(0.3, 0.3), MomentSpan(0.4, 0.4)) == 0.0);
}

TEST_CASE("iou_1d is symmetric, bounded and translation invariant") {
  Rng rng(1);
  for (int i = 0; i < 300; ++i) {
    const MomentSpan a = random_span(rng);
    const MomentSpan b = random_span(rng);
    const double v = iou_1d(a, b);
    CHECK(v == iou_1d(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    const double shift =
        std::min({0.2, 1.0 - a.end, 1.0 - b.end});
    const MomentSpan a2(a.start + shift, a.end + shift);
    const MomentSpan b2(b.start + shift, b.end + shift);
    CHECK(iou_1d(a2, b2) == doctest::Approx(v).epsilon(1e-12));
  }
}

TEST_CASE("nms keeps a single detection and validates the threshold") {
  const std::vector<Detection> one = {{MomentSpan(0.1, 0.5), 0.9}};
  CHECK(nms(one, 0.7).size() == 1);
  CHECK_THROWS_AS(nms(one, 0.0), ValidationError);
  CHECK_THROWS_AS(nms(one, 1.5), ValidationError);
}

TEST_CASE("nms matches the brute-force reference on 200 random instances") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Detection> dets;
    const int n = rng.uniform_int(1, 10);
    for (int i = 0; i < n; ++i) {
      // quantized scores force tie handling to matter
      dets.push_back({random_span(rng),
                      std::round(rng.uniform(0.0, 1.0) * 4.0) / 4.0});
    }
    const double thr = rng.uniform(0.1, 0.9);
    const auto got = nms(dets, thr);
    const auto want = nms_reference(dets, thr);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].score == want[i].score);
      CHECK(got[i].span.start == want[i].span.start);
      CHECK(got[i].span.end == want[i].span.end);
    }
    // kept detections overlap pairwise at most thr
    for (std::size_t i = 0; i < got.size(); ++i)
      for (std::size_t j = i + 1; j < got.size(); ++j)
        CHECK(iou_1d(got[i].span, got[j].span) <= thr);
    CHECK(got.size() <= dets.size());
  }
}

TEST_CASE("recall_at_iou endpoints and a hand-counted instance") {
  std::vector<std::vector<Detection>> ranked;
  std::vector<MomentSpan> gts;
  for (int i = 0; i < 5; ++i) {
    gts.push_back(MomentSpan(0.2, 0.6));
    ranked.push_back({{MomentSpan(0.2, 0.6), 1.0}});
  }
  CHECK(recall_at_iou(ranked, gts, 0.99) == 1.0);

  ranked[0] = {{MomentSpan(0.7, 0.9), 1.0}};  // disjoint -> miss
  ranked[1] = {};                             // empty -> miss
  ranked[2] = {{MomentSpan(0.2, 0.4), 1.0}};  // IoU 0.5 exactly
  CHECK(recall_at_iou(ranked, gts, 0.5) == doctest::Approx(3.0 / 5.0));
  CHECK(recall_at_iou(ranked, gts, 0.7) == doctest::Approx(2.0 / 5.0));

  // monotone nonincreasing in tau
  double prev = 1.0;
  for (double tau : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const double r = recall_at_iou(ranked, gts, tau);
    CHECK(r <= prev);
    prev = r;
  }
}

TEST_CASE("mean_ap endpoints") {
  std::vector<std::vector<Detection>> perfect, disjoint;
  std::vector<MomentSpan> gts;
  for (int i = 0; i < 4; ++i) {
    gts.push_back(MomentSpan(0.3, 0.5));
    perfect.push_back({{MomentSpan(0.3, 0.5), 0.9}});
    disjoint.push_back({{MomentSpan(0.7, 0.9), 0.9}});
  }
  CHECK(mean_ap(perfect, gts).first == doctest::Approx(1.0));
  CHECK(mean_ap(perfect, gts).second == doctest::Approx(1.0));
  CHECK(mean_ap(disjoint, gts).first == doctest::Approx(0.0));
}

TEST_CASE("average precision matches the exhaustive reference") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int n_samples = rng.uniform_int(1, 4);
    std::vector<std::vector<Detection>> ranked(n_samples);
    std::vector<MomentSpan> gts;
    int total_dets = 0;
    for (int s = 0; s < n_samples; ++s) {
      gts.push_back(random_span(rng));
      const int n = rng.uniform_int(0, 3);
      std::vector<Detection> dets;
      for (int i = 0; i < n && total_dets < 12; ++i, ++total_dets)
        dets.push_back({random_span(rng),
                        std::round(rng.uniform(0.0, 1.0) * 8.0) / 8.0});
      std::sort(dets.begin(), dets.end(),
                [](const Detection& a, const Detection& b) {
                  return a.score > b.score;
                });
      ranked[s] = dets;
    }
    for (double tau : {0.3, 0.5, 0.75}) {
      CHECK(average_precision(ranked, gts, tau) ==
            doctest::Approx(ap_reference(ranked, gts, tau)).epsilon(1e-10));
    }
  }
}

TEST_CASE("spearman endpoints, tie convention and monotone invariance") {
  CHECK(spearman_error_uncertainty({1, 2, 3, 4}, {0.1, 0.2, 0.3, 0.4}) ==
        doctest::Approx(1.0));
  CHECK(spearman_error_uncertainty({1, 2, 3, 4}, {4, 3, 2, 1}) ==
        doctest::Approx(-1.0));
  CHECK(spearman_error_uncertainty({1, 2, 3, 4}, {5, 5, 5, 5}) == 0.0);
  CHECK_THROWS_AS(spearman_error_uncertainty({1, 2}, {1, 2}),
                  ValidationError);
  CHECK_THROWS_AS(spearman_error_uncertainty({1, 2, 3}, {1, 2}),
                  ValidationError);

  Rng rng(4);
  std::vector<double> a, b;
  for (int i = 0; i < 50; ++i) {
    a.push_back(rng.uniform(-1, 1));
    b.push_back(rng.uniform(-1, 1));
  }
  const double base = spearman_error_uncertainty(a, b);
  std::vector<double> a2, b2;
  for (double x : a) a2.push_back(std::exp(3.0 * x));   // strictly monotone
  for (double x : b) b2.push_back(std::atan(x) * 2.0);  // strictly monotone
  CHECK(spearman_error_uncertainty(a2, b2) == base);
}

TEST_CASE("modality variance on the declared estimator") {
  const ModalityVariance flat =
      modality_variance_from_level_means({2, 2, 2}, {2, 2, 2});
  CHECK(flat.var_vis == 0.0);
  CHECK(flat.var_text == 0.0);
  CHECK(flat.delta_var == 0.0);

  const ModalityVariance ramp =
      modality_variance_from_level_means({1, 2, 3, 4, 5}, {3, 3, 3, 3, 3});
  CHECK(ramp.var_vis == doctest::Approx(2.0));
  CHECK(ramp.var_text == 0.0);
  CHECK(ramp.delta_var == doctest::Approx(2.0));
}

TEST_CASE("calibration report bins and correlations") {
  std::vector<double> err, alea, epis;
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const double e = rng.uniform(0.0, 1.0);
    err.push_back(e);
    alea.push_back(0.5);
    epis.push_back(e * e);  // monotone in the error
  }
  const CalibrationReport rep = calibration_report(err, alea, epis);
  CHECK(rep.spearman_epistemic == doctest::Approx(1.0));
  CHECK(rep.spearman_aleatoric == 0.0);
  int total = 0;
  for (const auto& b : rep.bins) total += b.count;
  CHECK(total == 100);
}
