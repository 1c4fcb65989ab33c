// Command-line front end: dataset generation, two-stage training, evaluation
// and the diagnostic artifact commands.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "demr/pipeline.hpp"

namespace {

demr::RunConfig resolve_config(const std::string& config_path,
                               const std::optional<std::uint64_t>& seed) {
  demr::RunConfig cfg = config_path.empty()
                            ? demr::default_config()
                            : demr::load_config_file(config_path);
  if (seed) {
    cfg.seed = *seed;
    cfg.data.seed = *seed;
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evidential moment retrieval lab"};
  app.require_subcommand(1);
  app.fallthrough();  // common flags may appear after the subcommand

  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON config file")
      ->configurable(false);
  app.add_option("--seed", seed, "Override the config seed");
  app.add_option("--out", out_dir, "Output directory");

  auto* gen = app.add_subcommand("gen-data",
                                 "Generate the train/test_iid/test_ood splits");

  auto* train = app.add_subcommand("train", "Run the two-stage training");

  std::string checkpoint;
  std::string split = "test_iid";
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--split", split, "train | test_iid | test_ood");

  std::string field_mode = "geom";
  int resolution = 11;
  auto* gradfield =
      app.add_subcommand("grad-field", "Emit the regularizer gradient field");
  gradfield->add_option("--mode", field_mode, "vanilla | geom");
  gradfield->add_option("--resolution", resolution, "Grid points per axis");

  std::string sweep_checkpoint;
  auto* sweep = app.add_subcommand(
      "noise-sweep", "Per-sample uncertainties under the noise ladders");
  sweep->add_option("--checkpoint", sweep_checkpoint, "Checkpoint file")
      ->required();

  std::string cal_checkpoint;
  std::string cal_split = "test_iid";
  auto* calibrate = app.add_subcommand(
      "calibrate", "Error-uncertainty diagnostics for a checkpoint");
  calibrate->add_option("--checkpoint", cal_checkpoint, "Checkpoint file")
      ->required();
  calibrate->add_option("--split", cal_split, "train | test_iid | test_ood");

  auto* gradcheck = app.add_subcommand(
      "grad-check", "Finite-difference check of the assembled model");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      demr::cmd_gen_data(resolve_config(config_path, seed), out_dir);
      std::cout << "wrote splits to " << out_dir << "\n";
    } else if (train->parsed()) {
      const auto result =
          demr::cmd_train(resolve_config(config_path, seed), out_dir);
      std::cout << "checkpoint: " << result.checkpoint_path << "\n"
                << "log:        " << result.log_path << "\n";
      if (!result.log.empty()) {
        const auto& last = result.log.back();
        std::printf("final epoch %d (stage %d): total %.6f mr %.6f qr %.6f\n",
                    last.epoch, last.stage, last.loss_total, last.loss_mr,
                    last.loss_qr);
      }
    } else if (eval->parsed()) {
      const auto m = demr::cmd_eval(resolve_config(config_path, seed),
                                    checkpoint, split, out_dir);
      std::printf("split %s: R1@0.5 %.4f R1@0.7 %.4f mAP %.4f mAP@0.75 %.4f "
                  "mIoU %.4f\n",
                  split.c_str(), m.r1_at.at(0.5), m.r1_at.at(0.7), m.map_avg,
                  m.map_at_075, m.miou);
    } else if (gradfield->parsed()) {
      const auto path = demr::cmd_grad_field(
          demr::parse_regularizer_mode(field_mode), resolution, out_dir);
      std::cout << "wrote " << path << "\n";
    } else if (sweep->parsed()) {
      const auto result = demr::cmd_noise_sweep(
          resolve_config(config_path, seed), sweep_checkpoint, out_dir);
      std::printf("var_vis %.6f var_text %.6f delta_var %.6f\n",
                  result.variance.var_vis, result.variance.var_text,
                  result.variance.delta_var);
      std::cout << "wrote " << result.csv_path << " and "
                << result.summary_path << "\n";
    } else if (calibrate->parsed()) {
      const auto result = demr::cmd_calibrate(resolve_config(config_path, seed),
                                              cal_checkpoint, cal_split,
                                              out_dir);
      std::printf("spearman aleatoric %.4f epistemic %.4f\n",
                  result.report.spearman_aleatoric,
                  result.report.spearman_epistemic);
      std::cout << "wrote " << result.scatter_path << " and "
                << result.report_path << "\n";
    } else if (gradcheck->parsed()) {
      demr::RunConfig cfg = config_path.empty()
                                ? demr::RunConfig{}
                                : demr::load_config_file(config_path);
      if (config_path.empty()) {
        // default check config: small enough for finite differences
        cfg.data.dim = 6;
        cfg.data.vocab_size = 10;
        cfg.data.n_concepts = 3;
        cfg.data.clips = 6;
        cfg.qr_hidden = 6;
        cfg.n_rff = 2;
        cfg.bias.len_min = 0.2;
        cfg.bias.len_max = 0.4;
        cfg.data.seed = cfg.seed;
      }
      if (seed) {
        cfg.seed = *seed;
        cfg.data.seed = *seed;
      }
      cfg.validate();
      bool all_pass = true;
      for (const char* mode : {"none", "nll_only", "vanilla", "geom"}) {
        cfg.mode = mode;
        const auto report = demr::cmd_grad_check(cfg);
        std::printf("mode %-8s max rel err %.3e (tol %.1e) %s\n", mode,
                    report.max_rel_err, report.tol,
                    report.pass ? "PASS" : "FAIL");
        if (!report.pass) {
          all_pass = false;
          for (const auto& p : report.params)
            if (p.max_rel_err > report.tol)
              std::printf("  offender %-16s rel err %.3e\n", p.name.c_str(),
                          p.max_rel_err);
        }
      }
      if (!all_pass) throw demr::NumericalError("gradient check failed");
    }
  } catch (const demr::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const demr::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
