#include "demr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace demr {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create directory '" + dir + "'");
}

// %.17g round-trips doubles and keeps CSV bytes deterministic
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_json_file(const ordered_json& j, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot open '" + path + "' for writing");
  f << j.dump(2) << "\n";
}

}  // namespace

Splits make_splits(const RunConfig& cfg) {
  cfg.validate();
  SynthConfig data_cfg = cfg.data;
  data_cfg.seed = cfg.seed;
  Dataset ds = generate_dataset(data_cfg, cfg.bias);
  Splits splits = split_iid_ood(ds, cfg.bias, cfg.split);
  if (cfg.noise.visual_sigma > 0.0 || cfg.noise.text_replace_ratio > 0.0) {
    const VocabLayout vocab = data_cfg.vocab();
    for (std::size_t i = 0; i < splits.train.samples.size(); ++i) {
      Sample& s = splits.train.samples[i];
      s = inject_visual_noise(s, cfg.noise,
                              derive_seed(cfg.seed, "train_noise_v", i));
      s = inject_text_noise(s, cfg.noise,
                            derive_seed(cfg.seed, "train_noise_t", i), vocab);
    }
  }
  return splits;
}

void cmd_gen_data(const RunConfig& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  const Splits splits = make_splits(cfg);
  save_dataset(splits.train, join(out_dir, "train.bin"));
  save_dataset(splits.test_iid, join(out_dir, "test_iid.bin"));
  save_dataset(splits.test_ood, join(out_dir, "test_ood.bin"));
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct BatchPlan {
  std::vector<int> indices;
};

std::vector<BatchPlan> plan_epoch(int n, int batch_size, std::uint64_t seed,
                                  const std::string& stage, int epoch) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "shuffle/" + stage, epoch));
  for (int i = n - 1; i > 0; --i) {
    const int j = rng.uniform_int(0, i);
    std::swap(order[i], order[j]);
  }
  std::vector<BatchPlan> plans;
  for (int at = 0; at < n; at += batch_size) {
    BatchPlan p;
    for (int i = at; i < std::min(n, at + batch_size); ++i)
      p.indices.push_back(order[i]);
    plans.push_back(std::move(p));
  }
  return plans;
}

void write_training_log(const std::vector<EpochLog>& log,
                        const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot open '" + path + "' for writing");
  f << "epoch,stage,loss_total,loss_mr,loss_ev_nll,loss_ev_reg,loss_qr,"
       "grad_norm\n";
  for (const auto& e : log)
    f << e.epoch << "," << e.stage << "," << fmt_double(e.loss_total) << ","
      << fmt_double(e.loss_mr) << "," << fmt_double(e.loss_ev_nll) << ","
      << fmt_double(e.loss_ev_reg) << "," << fmt_double(e.loss_qr) << ","
      << fmt_double(e.grad_norm) << "\n";
}

struct ParamSnapshot {
  std::vector<Tensor2D> values, m, v;
  std::int64_t step = 0;

  static ParamSnapshot take(const ParamStore& store) {
    ParamSnapshot s;
    for (const auto& e : store.entries()) {
      s.values.push_back(e.value);
      s.m.push_back(e.adam_m);
      s.v.push_back(e.adam_v);
    }
    s.step = store.step();
    return s;
  }

  void restore(ParamStore& store) const {
    for (std::size_t i = 0; i < store.entries().size(); ++i) {
      store.entries()[i].value = values[i];
      store.entries()[i].adam_m = m[i];
      store.entries()[i].adam_v = v[i];
    }
    store.set_step(step);
  }
};

}  // namespace

TrainResult cmd_train(const RunConfig& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  const Splits splits = make_splits(cfg);
  const Dataset& train = splits.train;
  if (train.samples.empty()) throw ValidationError("cmd_train: empty train split");

  Model model(cfg.model_config(), derive_seed(cfg.seed, "model"));
  const RegularizerMode mode = cfg.regularizer_mode();
  const VocabLayout vocab = cfg.data.vocab();
  const MaskPolicy policy = cfg.parsed_mask_policy();
  const std::uint64_t hash = config_hash(cfg);

  TrainResult result;
  result.checkpoint_path = join(out_dir, "checkpoint.bin");
  result.log_path = join(out_dir, "training_log.csv");

  ParamSnapshot last_good = ParamSnapshot::take(model.params());
  int epoch_counter = 0;

  auto run_stage = [&](int stage, int epochs, double lr) {
    const bool stage1 = stage == 1;
    const int n = static_cast<int>(train.samples.size());
    for (int ep = 0; ep < epochs; ++ep) {
      const auto plans = plan_epoch(n, cfg.batch_size, cfg.seed,
                                    stage1 ? "qr" : "main", ep);
      EpochLog log;
      log.epoch = epoch_counter;
      log.stage = stage;
      double weight = 0.0;
      for (const auto& plan : plans) {
        std::vector<MaskedQuery> masks;
        std::vector<BatchItem> batch;
        masks.reserve(plan.indices.size());
        for (int si : plan.indices) {
          BatchItem item;
          item.sample = &train.samples[si];
          if (stage1 && cfg.qr_enabled) {
            masks.push_back(mask_for_qr(
                train.samples[si], policy,
                derive_seed(cfg.seed, "mask", (std::uint64_t)ep * n + si),
                vocab));
            item.masked = &masks.back();
          }
          batch.push_back(item);
        }

        Tape tape(&model.params());
        const BatchLossNodes nodes =
            build_batch_loss(tape, model, batch, cfg.weights, mode, stage1);
        const double total = tape.scalar_value(nodes.total);
        if (!std::isfinite(total)) {
          last_good.restore(model.params());
          save_checkpoint(model.params(), hash, result.checkpoint_path);
          write_training_log(result.log, result.log_path);
          throw NumericalError(
              "cmd_train: non-finite loss at epoch " +
              std::to_string(epoch_counter) +
              "; last good checkpoint written to " + result.checkpoint_path);
        }
        model.params().zero_grads();
        tape.backward(nodes.total);
        const double gnorm = model.params().grad_norm();
        model.params().adam_step(lr);

        const double bw = static_cast<double>(plan.indices.size());
        log.loss_total += bw * total;
        log.loss_mr += bw * tape.scalar_value(nodes.mr);
        log.loss_ev_nll += bw * tape.scalar_value(nodes.ev_nll);
        log.loss_ev_reg += bw * tape.scalar_value(nodes.ev_reg);
        log.loss_qr += bw * tape.scalar_value(nodes.qr);
        log.grad_norm += bw * gnorm;
        weight += bw;
      }
      log.loss_total /= weight;
      log.loss_mr /= weight;
      log.loss_ev_nll /= weight;
      log.loss_ev_reg /= weight;
      log.loss_qr /= weight;
      log.grad_norm /= weight;
      result.log.push_back(log);
      ++epoch_counter;
      last_good = ParamSnapshot::take(model.params());
    }
  };

  if (cfg.qr_enabled) run_stage(1, cfg.qr_epochs, cfg.qr_lr);
  model.params().set_trainable_prefix("qr.", false);
  run_stage(2, cfg.epochs, cfg.lr);

  save_checkpoint(model.params(), hash, result.checkpoint_path);
  write_training_log(result.log, result.log_path);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalRecords evaluate_dataset(const Model& model, const Dataset& ds,
                             double nms_threshold) {
  if (ds.samples.empty())
    throw ValidationError("evaluate_dataset: empty split");
  EvalRecords rec;
  std::vector<std::vector<Detection>> ranked;
  for (const auto& s : ds.samples) {
    // forward-only tape; backward is never called, so the store stays intact
    Tape tape(const_cast<ParamStore*>(&model.params()));
    const Model::Forward fwd = model.forward(tape, s.video, s.query);
    const auto preds = model.read_predictions(tape, fwd);
    const int n_clips = static_cast<int>(preds.size());

    std::vector<Detection> dets;
    dets.reserve(preds.size());
    for (const auto& p : preds)
      dets.push_back({p.decoded_span(n_clips), sigmoid(p.foreground_logit)});
    std::vector<Detection> kept = nms(dets, nms_threshold);

    // map the winning detection back to its source clip
    int top_clip = 0;
    {
      double best_score = -1.0;
      for (const auto& p : preds) {
        const double sc = sigmoid(p.foreground_logit);
        if (sc > best_score) {
          best_score = sc;
          top_clip = p.clip_index;
        }
      }
    }

    SampleEval se;
    se.ranked = std::move(kept);
    se.top_clip = top_clip;
    const ClipPrediction& top = preds[top_clip];
    se.err_start = std::fabs(top.nig_start.gamma - s.gt.start);
    se.err_end = std::fabs(top.nig_end.gamma - s.gt.end);
    const UncertaintyTriple us = nig_uncertainties(top.nig_start);
    const UncertaintyTriple ue = nig_uncertainties(top.nig_end);
    se.aleatoric = 0.5 * (us.aleatoric + ue.aleatoric);
    se.epistemic = 0.5 * (us.epistemic + ue.epistemic);
    ranked.push_back(se.ranked);
    rec.per_sample.push_back(std::move(se));
    rec.gts.push_back(s.gt);
  }
  rec.metrics = compute_metric_report(ranked, rec.gts);
  return rec;
}

Model load_model(const RunConfig& cfg, const std::string& checkpoint_path) {
  Model model(cfg.model_config(), derive_seed(cfg.seed, "model"));
  const std::uint64_t stored = load_checkpoint(model.params(), checkpoint_path);
  if (stored != config_hash(cfg))
    throw ValidationError(
        "checkpoint '" + checkpoint_path +
        "' was trained under a different config (hash mismatch)");
  return model;
}

namespace {

const Dataset& pick_split(const Splits& splits, const std::string& name) {
  if (name == "train") return splits.train;
  if (name == "test_iid") return splits.test_iid;
  if (name == "test_ood") return splits.test_ood;
  throw ValidationError("unknown split '" + name +
                        "' (expected train, test_iid or test_ood)");
}

ordered_json metrics_to_json(const MetricReport& m) {
  ordered_json j;
  ordered_json r1;
  for (const auto& [tau, v] : m.r1_at) {
    char key[16];
    std::snprintf(key, sizeof(key), "%.2f", tau);
    r1[key] = v;
  }
  j["r1_at"] = r1;
  j["map_avg"] = m.map_avg;
  j["map_at_075"] = m.map_at_075;
  j["miou"] = m.miou;
  return j;
}

}  // namespace

MetricReport cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                      const std::string& split, const std::string& out_dir) {
  ensure_dir(out_dir);
  const Splits splits = make_splits(cfg);
  const Dataset& ds = pick_split(splits, split);
  const Model model = load_model(cfg, checkpoint_path);
  const EvalRecords rec = evaluate_dataset(model, ds, cfg.nms_threshold);
  write_json_file(metrics_to_json(rec.metrics),
                  join(out_dir, "metrics_" + split + ".json"));
  return rec.metrics;
}

std::string cmd_grad_field(RegularizerMode mode, int resolution,
                           const std::string& out_dir) {
  ensure_dir(out_dir);
  const auto field = sample_gradient_field(mode, resolution);
  const std::string path =
      join(out_dir, "gradfield_" + to_string(mode) + ".csv");
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot open '" + path + "' for writing");
  f << "delta,phi,minus_grad\n";
  for (const auto& p : field)
    f << fmt_double(p.delta) << "," << fmt_double(p.phi) << ","
      << fmt_double(p.minus_grad) << "\n";
  return path;
}

// ---------------------------------------------------------------------------
// Diagnostics over a trained model

namespace {

double mean_epistemic(const EvalRecords& rec) {
  double s = 0.0;
  for (const auto& se : rec.per_sample) s += se.epistemic;
  return s / rec.per_sample.size();
}

}  // namespace

double ood_uncertainty_contrast(const Model& model, const Dataset& test_iid,
                                const Dataset& test_ood, double nms_threshold) {
  if (test_iid.samples.empty() || test_ood.samples.empty())
    throw ValidationError("ood_uncertainty_contrast: empty split");
  const EvalRecords iid = evaluate_dataset(model, test_iid, nms_threshold);
  const EvalRecords ood = evaluate_dataset(model, test_ood, nms_threshold);
  return mean_epistemic(ood) / mean_epistemic(iid);
}

ModalityVariance modality_variance(const Model& model, const Dataset& ds,
                                   const std::vector<double>& visual_ladder,
                                   const std::vector<double>& text_ladder,
                                   double nms_threshold,
                                   std::uint64_t noise_seed) {
  if (visual_ladder.empty() || text_ladder.empty())
    throw ValidationError("modality_variance: empty noise ladder");
  const VocabLayout vocab = ds.cfg.vocab();
  std::vector<double> vis_means, text_means;
  for (std::size_t li = 0; li < visual_ladder.size(); ++li) {
    Dataset noisy = ds;
    NoiseSpec spec;
    spec.visual_sigma = visual_ladder[li];
    for (std::size_t i = 0; i < noisy.samples.size(); ++i)
      noisy.samples[i] = inject_visual_noise(
          noisy.samples[i], spec, derive_seed(noise_seed, "sweep_v", li * 1000003 + i));
    vis_means.push_back(
        mean_epistemic(evaluate_dataset(model, noisy, nms_threshold)));
  }
  for (std::size_t li = 0; li < text_ladder.size(); ++li) {
    Dataset noisy = ds;
    NoiseSpec spec;
    spec.text_replace_ratio = text_ladder[li];
    for (std::size_t i = 0; i < noisy.samples.size(); ++i)
      noisy.samples[i] = inject_text_noise(
          noisy.samples[i], spec, derive_seed(noise_seed, "sweep_t", li * 1000003 + i),
          vocab);
    text_means.push_back(
        mean_epistemic(evaluate_dataset(model, noisy, nms_threshold)));
  }
  return modality_variance_from_level_means(vis_means, text_means);
}

NoiseSweepResult cmd_noise_sweep(const RunConfig& cfg,
                                 const std::string& checkpoint_path,
                                 const std::string& out_dir) {
  ensure_dir(out_dir);
  const Splits splits = make_splits(cfg);
  const Dataset& ds = splits.test_iid;
  if (ds.samples.empty())
    throw ValidationError("cmd_noise_sweep: empty test_iid split");
  const Model model = load_model(cfg, checkpoint_path);
  const VocabLayout vocab = cfg.data.vocab();

  NoiseSweepResult result;
  result.csv_path = join(out_dir, "noise_sweep.csv");
  std::ofstream csv(result.csv_path);
  if (!csv)
    throw ValidationError("cannot open '" + result.csv_path + "' for writing");
  csv << "noise_level,modality,uncertainty\n";

  std::vector<double> vis_means, text_means;
  for (std::size_t li = 0; li < cfg.visual_ladder.size(); ++li) {
    Dataset noisy = ds;
    NoiseSpec spec;
    spec.visual_sigma = cfg.visual_ladder[li];
    for (std::size_t i = 0; i < noisy.samples.size(); ++i)
      noisy.samples[i] = inject_visual_noise(
          noisy.samples[i], spec, derive_seed(cfg.seed, "sweep_v", li * 1000003 + i));
    const EvalRecords rec = evaluate_dataset(model, noisy, cfg.nms_threshold);
    for (const auto& se : rec.per_sample)
      csv << fmt_double(cfg.visual_ladder[li]) << ",visual,"
          << fmt_double(se.epistemic) << "\n";
    vis_means.push_back(mean_epistemic(rec));
  }
  for (std::size_t li = 0; li < cfg.text_ladder.size(); ++li) {
    Dataset noisy = ds;
    NoiseSpec spec;
    spec.text_replace_ratio = cfg.text_ladder[li];
    for (std::size_t i = 0; i < noisy.samples.size(); ++i)
      noisy.samples[i] = inject_text_noise(
          noisy.samples[i], spec, derive_seed(cfg.seed, "sweep_t", li * 1000003 + i),
          vocab);
    const EvalRecords rec = evaluate_dataset(model, noisy, cfg.nms_threshold);
    for (const auto& se : rec.per_sample)
      csv << fmt_double(cfg.text_ladder[li]) << ",text,"
          << fmt_double(se.epistemic) << "\n";
    text_means.push_back(mean_epistemic(rec));
  }
  csv.close();

  result.variance = modality_variance_from_level_means(vis_means, text_means);
  ordered_json j;
  j["var_vis"] = result.variance.var_vis;
  j["var_text"] = result.variance.var_text;
  j["delta_var"] = result.variance.delta_var;
  result.summary_path = join(out_dir, "noise_summary.json");
  write_json_file(j, result.summary_path);
  return result;
}

CalibrateResult cmd_calibrate(const RunConfig& cfg,
                              const std::string& checkpoint_path,
                              const std::string& split,
                              const std::string& out_dir) {
  ensure_dir(out_dir);
  const Splits splits = make_splits(cfg);
  const Dataset& ds = pick_split(splits, split);
  const Model model = load_model(cfg, checkpoint_path);
  const EvalRecords rec = evaluate_dataset(model, ds, cfg.nms_threshold);

  std::vector<double> errors, alea, epis;
  for (const auto& se : rec.per_sample) {
    errors.push_back(0.5 * (se.err_start + se.err_end));
    alea.push_back(se.aleatoric);
    epis.push_back(se.epistemic);
  }
  double max_err = 0.0;
  for (double e : errors) max_err = std::max(max_err, e);
  std::vector<double> norm_errors;
  for (double e : errors) norm_errors.push_back(e / std::max(max_err, kEps));

  CalibrateResult result;
  result.report = calibration_report(errors, alea, epis);
  result.scatter_path = join(out_dir, "calibration_scatter.csv");
  std::ofstream csv(result.scatter_path);
  if (!csv)
    throw ValidationError("cannot open '" + result.scatter_path +
                          "' for writing");
  csv << "error,aleatoric,epistemic\n";
  for (std::size_t i = 0; i < norm_errors.size(); ++i)
    csv << fmt_double(norm_errors[i]) << "," << fmt_double(alea[i]) << ","
        << fmt_double(epis[i]) << "\n";
  csv.close();

  ordered_json j;
  j["spearman_aleatoric"] = result.report.spearman_aleatoric;
  j["spearman_epistemic"] = result.report.spearman_epistemic;
  ordered_json bins = ordered_json::array();
  for (const auto& b : result.report.bins) {
    ordered_json bj;
    bj["err_lo"] = b.err_lo;
    bj["err_hi"] = b.err_hi;
    bj["count"] = b.count;
    bj["mean_aleatoric"] = b.mean_aleatoric;
    bj["mean_epistemic"] = b.mean_epistemic;
    bins.push_back(bj);
  }
  j["bins"] = bins;
  result.report_path = join(out_dir, "calibration.json");
  write_json_file(j, result.report_path);
  return result;
}

// ---------------------------------------------------------------------------
// Gradient check of the assembled model

GradCheckReport cmd_grad_check(const RunConfig& cfg,
                               const std::string& corrupt_param) {
  cfg.validate();
  Model model(cfg.model_config(), derive_seed(cfg.seed, "model"));
  for (const auto& e : model.params().entries())
    if (e.value.size() > 64)
      throw ValidationError(
          "cmd_grad_check: parameter '" + e.name + "' has " +
          std::to_string(e.value.size()) +
          " entries; the check requires <= 64 per tensor (shrink dims)");

  SynthConfig data_cfg = cfg.data;
  data_cfg.seed = cfg.seed;
  data_cfg.n_samples = 2;
  const Dataset ds = generate_dataset(data_cfg, cfg.bias);
  const VocabLayout vocab = data_cfg.vocab();
  const MaskPolicy policy = cfg.parsed_mask_policy();

  std::vector<MaskedQuery> masks;
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    masks.push_back(mask_for_qr(ds.samples[i], policy,
                                derive_seed(cfg.seed, "mask", i), vocab));

  const RegularizerMode mode = cfg.regularizer_mode();
  // the geom normalization constants are gradient-stopped, so the check
  // freezes them at the base point before differencing
  GeomNorm norm{0.0, 0.0};
  bool norm_known = false;
  auto loss = [&](bool with_grad) {
    std::vector<BatchItem> batch;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
      batch.push_back({&ds.samples[i], cfg.qr_enabled ? &masks[i] : nullptr});
    Tape tape(&model.params());
    const BatchLossNodes nodes =
        build_batch_loss(tape, model, batch, cfg.weights, mode, true,
                         norm_known ? &norm : nullptr);
    if (!norm_known) {
      norm = {nodes.geom_max_delta, nodes.geom_max_phi};
      norm_known = true;
    }
    if (with_grad) tape.backward(nodes.total);
    return tape.scalar_value(nodes.total);
  };
  return grad_check(model.params(), loss, 1e-5, 1e-4, corrupt_param);
}

}  // namespace demr
