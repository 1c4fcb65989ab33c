#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "demr/data.hpp"
#include "demr/model.hpp"

namespace demr {

/// Everything one experiment run needs. Serialized as flat JSON with dotted
/// keys; unknown keys are rejected, serialization round-trips losslessly.
struct RunConfig {
  std::uint64_t seed = 1;

  SynthConfig data;  // data.seed mirrors the run seed
  BiasSpec bias;
  NoiseSpec noise;  // optional corruption of the training split

  std::string fusion = "rff";
  int n_rff = 4;
  int qr_hidden = 32;
  bool qr_enabled = true;

  std::string mode = "geom";
  LossWeights weights;

  int qr_epochs = 30;
  double qr_lr = 1e-5;
  int epochs = 50;
  double lr = 1e-4;
  int batch_size = 32;
  std::string mask_policy = "one_noun";
  double mask_ratio = 0.15;

  SplitSpec split;
  double nms_threshold = 0.7;
  std::vector<double> visual_ladder = {0.0, 0.25, 0.5, 1.0, 2.0};
  std::vector<double> text_ladder = {0.0, 0.25, 0.5, 0.75, 1.0};

  void validate() const;

  RegularizerMode regularizer_mode() const {
    return parse_regularizer_mode(mode);
  }
  ModelConfig model_config() const;
  MaskPolicy parsed_mask_policy() const {
    return MaskPolicy::parse(mask_policy, mask_ratio);
  }
};

RunConfig default_config();

/// Strict parse: every key must be known and typed correctly.
RunConfig parse_config_json(const std::string& text);
RunConfig load_config_file(const std::string& path);

/// Canonical pretty-printed form with a fixed key order.
std::string serialize_config(const RunConfig& cfg);

/// FNV-1a over the canonical serialization.
std::uint64_t config_hash(const RunConfig& cfg);

}  // namespace demr
