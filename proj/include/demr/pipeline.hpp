#pragma once

#include <string>
#include <vector>

#include "demr/checkpoint.hpp"
#include "demr/config.hpp"
#include "demr/metrics.hpp"

namespace demr {

/// Regenerates the three splits from the config (data are a pure function of
/// config + seed). Training-split corruption from the noise block, when
/// configured, is applied here.
Splits make_splits(const RunConfig& cfg);

struct EpochLog {
  int epoch = 0;
  int stage = 0;
  double loss_total = 0.0;
  double loss_mr = 0.0;
  double loss_ev_nll = 0.0;
  double loss_ev_reg = 0.0;
  double loss_qr = 0.0;
  double grad_norm = 0.0;
};

struct TrainResult {
  std::string checkpoint_path;
  std::string log_path;
  std::vector<EpochLog> log;
};

/// Two-stage schedule: stage 1 trains MR + evidential + QR on masked queries
/// at the QR learning rate; stage 2 freezes the QR head, drops the QR loss
/// and continues on full queries. A non-finite batch loss aborts with the
/// last end-of-epoch parameters written out.
TrainResult cmd_train(const RunConfig& cfg, const std::string& out_dir);

struct SampleEval {
  std::vector<Detection> ranked;  // post-NMS, score order
  int top_clip = -1;
  double err_start = 0.0;  // |gamma - gt| of the top clip's boundary heads
  double err_end = 0.0;
  double aleatoric = 0.0;  // mean over the two boundary heads
  double epistemic = 0.0;
};

struct EvalRecords {
  std::vector<SampleEval> per_sample;
  std::vector<MomentSpan> gts;
  MetricReport metrics;
};

/// Forward + decode + NMS + metrics over a dataset with a trained model.
EvalRecords evaluate_dataset(const Model& model, const Dataset& ds,
                             double nms_threshold);

Model load_model(const RunConfig& cfg, const std::string& checkpoint_path);

/// Evaluates a named split ("train", "test_iid", "test_ood") and writes
/// metrics_<split>.json.
MetricReport cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                      const std::string& split, const std::string& out_dir);

/// Writes the minus-gradient field table as CSV (delta,phi,minus_grad).
std::string cmd_grad_field(RegularizerMode mode, int resolution,
                           const std::string& out_dir);

struct NoiseSweepResult {
  ModalityVariance variance;
  std::string csv_path;
  std::string summary_path;
};

/// Per-sample epistemic uncertainty under each ladder level for both
/// modalities (CSV noise_level,modality,uncertainty) plus the variance
/// summary. Runs on the test_iid split.
NoiseSweepResult cmd_noise_sweep(const RunConfig& cfg,
                                 const std::string& checkpoint_path,
                                 const std::string& out_dir);

struct CalibrateResult {
  CalibrationReport report;
  std::string scatter_path;
  std::string report_path;
};

/// Normalized top-1 boundary error against both uncertainties; Spearman
/// statistics plus a scatter CSV (error,aleatoric,epistemic).
CalibrateResult cmd_calibrate(const RunConfig& cfg,
                              const std::string& checkpoint_path,
                              const std::string& split,
                              const std::string& out_dir);

/// Finite-difference check of the full assembled model under every
/// regularizer mode. Enforces small dims (<= 64 entries per tensor).
/// corrupt_param is a test hook that falsifies one analytic gradient.
GradCheckReport cmd_grad_check(const RunConfig& cfg,
                               const std::string& corrupt_param = "");

/// Ratio mean-epistemic(test_ood) / mean-epistemic(test_iid).
double ood_uncertainty_contrast(const Model& model, const Dataset& test_iid,
                                const Dataset& test_ood, double nms_threshold);

/// Dataset-mean epistemic uncertainty per noise level and modality;
/// variance of the per-level means per the declared estimator.
ModalityVariance modality_variance(const Model& model, const Dataset& ds,
                                   const std::vector<double>& visual_ladder,
                                   const std::vector<double>& text_ladder,
                                   double nms_threshold,
                                   std::uint64_t noise_seed);

/// gen-data artifact: writes train/test_iid/test_ood .bin files + sidecars.
void cmd_gen_data(const RunConfig& cfg, const std::string& out_dir);

}  // namespace demr
