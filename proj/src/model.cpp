#include "demr/model.hpp"

#include <algorithm>
#include <cmath>

namespace demr {

void LossWeights::validate() const {
  for (double v : {l1, iou, nll, geom, reg, der})
    if (!(v >= 0.0) || !std::isfinite(v))
      throw ValidationError("loss weights must be finite and >= 0");
}

MomentSpan ClipPrediction::decoded_span(int n_clips) const {
  const double c = clip_center(clip_index, n_clips);
  return MomentSpan(std::clamp(c - left, 0.0, 1.0),
                    std::clamp(c + right, 0.0, 1.0));
}

double smooth_l1(double pred, double target) {
  const double x = pred - target;
  const double a = std::fabs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double mr_loss(const std::vector<ClipPrediction>& preds, const MomentSpan& gt,
               const std::vector<bool>& fg_mask, const LossWeights& w) {
  if (preds.size() != fg_mask.size())
    throw ValidationError("mr_loss: prediction/mask length mismatch");
  w.validate();
  const int n = static_cast<int>(preds.size());
  if (n == 0) throw ValidationError("mr_loss: no clips");

  double bce = 0.0;
  double reg = 0.0;
  int n_fg = 0;
  for (int i = 0; i < n; ++i) {
    const auto& p = preds[i];
    const double z = p.foreground_logit;
    const double t = fg_mask[i] ? 1.0 : 0.0;
    bce += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::fabs(z)));
    if (!fg_mask[i]) continue;
    ++n_fg;
    const double c = clip_center(p.clip_index, n);
    reg += w.l1 * (smooth_l1(p.left, c - gt.start) +
                   smooth_l1(p.right, gt.end - c)) +
           w.iou * giou_loss_1d(p.decoded_span(n), gt);
  }
  return bce / n + (n_fg > 0 ? reg / n_fg : 0.0);
}

double qr_loss(const Tensor2D& logits, const MaskedQuery& mq) {
  if (static_cast<std::size_t>(logits.rows) != mq.mask_positions.size())
    throw ValidationError("qr_loss: one logit row per masked position");
  if (logits.rows == 0) return 0.0;
  double s = 0.0;
  for (int r = 0; r < logits.rows; ++r) {
    const int target = mq.targets[r];
    if (target < 0 || target >= logits.cols)
      throw ValidationError("qr_loss: target id " + std::to_string(target) +
                            " outside vocabulary of size " +
                            std::to_string(logits.cols));
    double m = logits.at(r, 0);
    for (int c = 1; c < logits.cols; ++c) m = std::max(m, logits.at(r, c));
    double lse = 0.0;
    for (int c = 0; c < logits.cols; ++c) lse += std::exp(logits.at(r, c) - m);
    s += m + std::log(lse) - logits.at(r, target);
  }
  return s / logits.rows;
}

double evidential_loss(double b, const NIGParams& p, const NormalizedPair& np,
                       const LossWeights& w, RegularizerMode mode) {
  switch (mode) {
    case RegularizerMode::none:
      return 0.0;
    case RegularizerMode::nll_only:
      return w.nll * student_t_nll(b, p);
    case RegularizerMode::vanilla:
      return w.nll * student_t_nll(b, p) +
             w.reg * vanilla_regularizer(evidence_pair(b, p)).value;
    case RegularizerMode::geom:
      return w.nll * student_t_nll(b, p) + w.geom * geom_regularizer(np).value;
  }
  return 0.0;
}

double evidential_mode_scale(RegularizerMode mode) {
  switch (mode) {
    case RegularizerMode::none: return 0.0;
    case RegularizerMode::geom: return 2.0;
    default: return 1.0;
  }
}

double total_loss(const TotalLossParts& parts) {
  if (parts.n_clips <= 0)
    throw ValidationError("total_loss: clip count must be positive");
  const double c = evidential_mode_scale(parts.mode);
  double loss = parts.mr +
                parts.lambda_der * (c / parts.n_clips) * parts.evidential_sum;
  if (parts.stage1_qr) loss += parts.qr;
  return loss;
}

// ---------------------------------------------------------------------------
// Model

void ModelConfig::validate() const {
  if (dim < 4) throw ValidationError("model dim must be >= 4");
  if (n_rff < 1) throw ValidationError("n_rff must be >= 1");
  if (vocab_size < 7) throw ValidationError("vocab_size must be >= 7");
  if (qr_hidden < 1) throw ValidationError("qr_hidden must be >= 1");
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  params_.add("embed.tok", cfg.vocab_size, cfg.dim);
  if (cfg.fusion == FusionKind::rff)
    add_rff_params(params_, cfg.dim, cfg.n_rff);
  else
    add_concat_params(params_, cfg.dim);
  params_.add("mr.fg.w", cfg.dim, 1);
  params_.add("mr.fg.b", 1, 1);
  params_.add("mr.off.w", cfg.dim, 2);
  params_.add("mr.off.b", 1, 2);
  params_.add("mr.ev.w", cfg.dim, 8);
  params_.add("mr.ev.b", 1, 8);
  if (cfg.qr_enabled) {
    params_.add("qr.w1", cfg.dim, cfg.qr_hidden);
    params_.add("qr.b1", 1, cfg.qr_hidden);
    params_.add("qr.w2", cfg.qr_hidden, cfg.vocab_size);
    params_.add("qr.b2", 1, cfg.vocab_size);
  }
  params_.init_xavier(seed);
}

Model::Forward Model::forward(Tape& t, const Tensor2D& video,
                              const std::vector<int>& tokens) const {
  if (video.cols != cfg_.dim)
    throw ValidationError("forward: video width " + video.shape_str() +
                          " does not match model dim " +
                          std::to_string(cfg_.dim));
  if (!video.all_finite())
    throw ValidationError("forward: non-finite video features");
  for (int tok : tokens)
    if (tok < 0 || tok >= cfg_.vocab_size)
      throw ValidationError("forward: token id " + std::to_string(tok) +
                            " outside vocabulary");

  Forward f;
  const int v0 = t.input(video);
  const int text0 = t.gather_rows(t.param("embed.tok"), tokens);
  if (cfg_.fusion == FusionKind::rff) {
    const FusionState fused = rff_stack(t, v0, text0, cfg_.n_rff);
    f.fused_video = fused.video;
    f.fused_text = fused.text;
  } else {
    f.fused_video = concat_fusion(t, v0, text0);
    f.fused_text = text0;
  }
  f.fg_logits = t.affine(f.fused_video, t.param("mr.fg.w"), t.param("mr.fg.b"));
  f.offsets = t.softplus_op(
      t.affine(f.fused_video, t.param("mr.off.w"), t.param("mr.off.b")));
  f.ev_raw = t.affine(f.fused_video, t.param("mr.ev.w"), t.param("mr.ev.b"));
  f.ev_raw_detached = t.affine(t.stop_gradient(f.fused_video),
                               t.param("mr.ev.w"), t.param("mr.ev.b"));
  return f;
}

int Model::qr_logits(Tape& t, int fused_text, const MaskedQuery& mq) const {
  if (!cfg_.qr_enabled)
    throw ValidationError("qr_logits: QR head disabled in this model");
  const int rows = t.gather_rows(fused_text, mq.mask_positions);
  const int h = t.tanh_op(t.affine(rows, t.param("qr.w1"), t.param("qr.b1")));
  return t.affine(h, t.param("qr.w2"), t.param("qr.b2"));
}

std::vector<ClipPrediction> Model::read_predictions(const Tape& t,
                                                    const Forward& f) const {
  const Tensor2D& logits = t.value(f.fg_logits);
  const Tensor2D& offsets = t.value(f.offsets);
  const Tensor2D& raw = t.value(f.ev_raw);
  std::vector<ClipPrediction> preds;
  preds.reserve(logits.rows);
  for (int i = 0; i < logits.rows; ++i) {
    ClipPrediction p;
    p.clip_index = i;
    p.foreground_logit = logits.at(i, 0);
    p.left = offsets.at(i, 0);
    p.right = offsets.at(i, 1);
    p.nig_start = constrain_raw_to_nig(
        {raw.at(i, 0), raw.at(i, 1), raw.at(i, 2), raw.at(i, 3)});
    p.nig_end = constrain_raw_to_nig(
        {raw.at(i, 4), raw.at(i, 5), raw.at(i, 6), raw.at(i, 7)});
    preds.push_back(p);
  }
  return preds;
}

// ---------------------------------------------------------------------------
// Batch loss assembly

BatchLossNodes build_batch_loss(Tape& t, const Model& model,
                                const std::vector<BatchItem>& batch,
                                const LossWeights& w, RegularizerMode mode,
                                bool stage1_qr, const GeomNorm* geom_norm) {
  w.validate();
  if (batch.empty()) throw ValidationError("build_batch_loss: empty batch");

  struct ItemNodes {
    Model::Forward fwd;
    std::vector<int> fg;
    double b_start = 0.0, b_end = 0.0;
  };
  std::vector<ItemNodes> items;
  items.reserve(batch.size());

  std::vector<int> mr_nodes;
  std::vector<int> qr_nodes;
  int n_fg_total = 0;
  double max_delta = 0.0;
  double max_phi = 0.0;

  for (const auto& bi : batch) {
    const Sample& s = *bi.sample;
    const std::vector<int>& tokens =
        (stage1_qr && bi.masked) ? bi.masked->tokens : s.query;

    ItemNodes it;
    it.fwd = model.forward(t, s.video, tokens);
    it.fg = foreground_clips(s.gt, s.video.rows);
    it.b_start = s.gt.start;
    it.b_end = s.gt.end;
    n_fg_total += static_cast<int>(it.fg.size());

    const int n_clips = s.video.rows;
    std::vector<double> fg_target(n_clips, 0.0);
    std::vector<double> centers(n_clips);
    std::vector<double> offset_targets(static_cast<std::size_t>(n_clips) * 2,
                                       0.0);
    for (int i = 0; i < n_clips; ++i) centers[i] = clip_center(i, n_clips);
    for (int fg : it.fg) {
      fg_target[fg] = 1.0;
      offset_targets[fg * 2 + 0] = centers[fg] - s.gt.start;
      offset_targets[fg * 2 + 1] = s.gt.end - centers[fg];
    }

    const int bce = t.bce_with_logits_mean(it.fwd.fg_logits, fg_target);
    const int sl1 = t.smooth_l1_rows_mean(it.fwd.offsets, offset_targets, it.fg);
    const int giou = t.giou_span_rows_mean(it.fwd.offsets, centers, s.gt.start,
                                           s.gt.end, it.fg);
    mr_nodes.push_back(t.weighted_sum({bce, sl1, giou}, {1.0, w.l1, w.iou}));

    // pool evidence pairs for the geom normalization constants
    if (mode == RegularizerMode::geom) {
      const Tensor2D& raw = t.value(it.fwd.ev_raw);
      for (int fg : it.fg) {
        for (int side = 0; side < 2; ++side) {
          const int base = side * 4;
          const NIGParams p = constrain_raw_to_nig(
              {raw.at(fg, base + 0), raw.at(fg, base + 1),
               raw.at(fg, base + 2), raw.at(fg, base + 3)});
          const EvidencePair pair =
              evidence_pair(side == 0 ? it.b_start : it.b_end, p);
          max_delta = std::max(max_delta, pair.delta);
          max_phi = std::max(max_phi, pair.phi);
        }
      }
    }

    if (stage1_qr && model.config().qr_enabled && bi.masked &&
        !bi.masked->mask_positions.empty()) {
      const int logits = model.qr_logits(t, it.fwd.fused_text, *bi.masked);
      qr_nodes.push_back(
          t.cross_entropy_rows_mean(logits, bi.masked->targets));
    }

    items.push_back(std::move(it));
  }

  if (geom_norm) {
    max_delta = geom_norm->max_delta;
    max_phi = geom_norm->max_phi;
  }

  BatchLossNodes out;
  out.n_fg_clips = n_fg_total;
  out.geom_max_delta = max_delta;
  out.geom_max_phi = max_phi;
  out.mr = t.weighted_sum(
      mr_nodes, std::vector<double>(mr_nodes.size(), 1.0 / mr_nodes.size()));

  const double c = evidential_mode_scale(mode);
  if (mode != RegularizerMode::none && n_fg_total > 0) {
    const double ev_scale = w.der * c / n_fg_total;
    std::vector<int> nll_nodes;
    std::vector<int> reg_nodes;
    for (const auto& it : items) {
      nll_nodes.push_back(t.evidential_rows_sum(
          it.fwd.ev_raw, it.fg, it.b_start, it.b_end, Tape::EvTerm::nll));
      if (mode == RegularizerMode::vanilla) {
        reg_nodes.push_back(
            t.evidential_rows_sum(it.fwd.ev_raw_detached, it.fg, it.b_start,
                                  it.b_end, Tape::EvTerm::vanilla_reg));
      } else if (mode == RegularizerMode::geom) {
        reg_nodes.push_back(t.evidential_rows_sum(
            it.fwd.ev_raw_detached, it.fg, it.b_start, it.b_end,
            Tape::EvTerm::geom_reg, max_delta, max_phi));
      }
    }
    out.ev_nll = t.weighted_sum(
        nll_nodes,
        std::vector<double>(nll_nodes.size(), ev_scale * w.nll));
    if (!reg_nodes.empty()) {
      const double reg_w =
          mode == RegularizerMode::vanilla ? w.reg : w.geom;
      out.ev_reg = t.weighted_sum(
          reg_nodes,
          std::vector<double>(reg_nodes.size(), ev_scale * reg_w));
    } else {
      out.ev_reg = t.constant(Tensor2D::scalar(0.0));
    }
  } else {
    out.ev_nll = t.constant(Tensor2D::scalar(0.0));
    out.ev_reg = t.constant(Tensor2D::scalar(0.0));
  }

  if (!qr_nodes.empty()) {
    out.qr = t.weighted_sum(
        qr_nodes, std::vector<double>(qr_nodes.size(), 1.0 / qr_nodes.size()));
  } else {
    out.qr = t.constant(Tensor2D::scalar(0.0));
  }

  out.total = t.weighted_sum({out.mr, out.ev_nll, out.ev_reg, out.qr},
                             {1.0, 1.0, 1.0, stage1_qr ? 1.0 : 0.0});
  return out;
}

}  // namespace demr
