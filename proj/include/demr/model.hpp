#pragma once

#include <optional>
#include <vector>

#include "demr/autodiff.hpp"
#include "demr/data.hpp"
#include "demr/fusion.hpp"
#include "demr/span.hpp"

namespace demr {

/// Loss term weights. All nonnegative; `der` scales the whole evidential
/// term, `reg` the vanilla regularizer, `geom` the line regularizer.
struct LossWeights {
  double l1 = 1.0;
  double iou = 1.0;
  double nll = 1.0;
  double geom = 1e-2;
  double reg = 1e-2;
  double der = 1e-3;

  void validate() const;
};

/// Per-clip head outputs. Offsets are distances from the clip center; the
/// decoded span is [center-left, center+right] clipped to [0,1].
struct ClipPrediction {
  int clip_index = 0;
  double foreground_logit = 0.0;
  double left = 0.0;
  double right = 0.0;
  NIGParams nig_start;
  NIGParams nig_end;

  MomentSpan decoded_span(int n_clips) const;
};

// --- scalar loss functions -------------------------------------------------

double smooth_l1(double pred, double target);

/// Mean over foreground clips of l1+iou regression terms plus a BCE term on
/// the foreground logits over all clips. With no foreground clip the
/// regression terms vanish and only the BCE remains.
double mr_loss(const std::vector<ClipPrediction>& preds, const MomentSpan& gt,
               const std::vector<bool>& fg_mask, const LossWeights& w);

/// Mean masked-token cross entropy; logits holds one row per masked position.
double qr_loss(const Tensor2D& logits, const MaskedQuery& mq);

/// Per-boundary evidential term under the given mode.
double evidential_loss(double b, const NIGParams& p, const NormalizedPair& np,
                       const LossWeights& w, RegularizerMode mode);

struct TotalLossParts {
  double mr = 0.0;
  double evidential_sum = 0.0;  // sum of per-clip evidential terms
  int n_clips = 0;              // averaging denominator for the sum
  double qr = 0.0;
  bool stage1_qr = false;
  RegularizerMode mode = RegularizerMode::geom;
  double lambda_der = 1e-3;
};

/// mr + lambda_der * (c/N) * evidential_sum (+ qr in stage 1), where c = 2
/// under geom mode and c = 1 under the nll_only/vanilla baseline modes.
double total_loss(const TotalLossParts& parts);

double evidential_mode_scale(RegularizerMode mode);

// --- trainable model ---------------------------------------------------------

struct ModelConfig {
  int dim = 16;
  int n_rff = 4;
  int vocab_size = 64;
  int qr_hidden = 32;
  FusionKind fusion = FusionKind::rff;
  bool qr_enabled = true;

  void validate() const;
};

/// Token embedding + fusion stack + MR/evidential/QR heads over one
/// ParamStore. Forward passes build onto a caller-provided tape.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  struct Forward {
    int fused_video = -1;  // L_v x D
    int fused_text = -1;   // L_q x D
    int fg_logits = -1;    // L_v x 1
    int offsets = -1;      // L_v x 2, nonnegative
    int ev_raw = -1;       // L_v x 8
    int ev_raw_detached = -1;  // same head on a gradient-stopped fusion copy
  };

  /// Runs fusion and the MR/evidential heads for one sample.
  Forward forward(Tape& t, const Tensor2D& video,
                  const std::vector<int>& tokens) const;

  /// QR logits at the masked positions (rows align with mq.mask_positions).
  int qr_logits(Tape& t, int fused_text, const MaskedQuery& mq) const;

  /// Reads the per-clip predictions off a completed forward pass.
  std::vector<ClipPrediction> read_predictions(const Tape& t,
                                               const Forward& f) const;

 private:
  ModelConfig cfg_;
  ParamStore params_;
};

/// Scalar component nodes of one batch loss, all 1x1.
struct BatchLossNodes {
  int mr = -1;
  int ev_nll = -1;   // weighted NLL part of the evidential term
  int ev_reg = -1;   // weighted regularizer part (head-only gradients)
  int qr = -1;
  int total = -1;
  int n_fg_clips = 0;
  double geom_max_delta = 0.0;  // normalization constants actually used
  double geom_max_phi = 0.0;
};

struct BatchItem {
  const Sample* sample = nullptr;
  const MaskedQuery* masked = nullptr;  // null outside stage 1
};

/// Normalization constants for the geom term, when they must be pinned
/// externally (finite-difference checks freeze them at the base point, the
/// stop-gradient semantics).
struct GeomNorm {
  double max_delta;
  double max_phi;
};

/// Builds the full training loss for a batch on one tape. The regularizer
/// component reaches only the evidential head parameters; the geom max
/// statistics are pooled over all foreground boundary pairs of the batch and
/// baked in as constants (or taken from geom_norm when provided).
BatchLossNodes build_batch_loss(Tape& t, const Model& model,
                                const std::vector<BatchItem>& batch,
                                const LossWeights& w, RegularizerMode mode,
                                bool stage1_qr,
                                const GeomNorm* geom_norm = nullptr);

}  // namespace demr
