#include "demr/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "demr/rng.hpp"

namespace demr {

using ordered_json = nlohmann::ordered_json;

void RunConfig::validate() const {
  data.validate();
  bias.validate();
  noise.validate();
  split.validate();
  weights.validate();
  parse_fusion_kind(fusion);
  parse_regularizer_mode(mode);
  MaskPolicy::parse(mask_policy, mask_ratio);
  if (n_rff < 1) throw ValidationError("model.n_rff must be >= 1");
  if (qr_hidden < 1) throw ValidationError("model.qr_hidden must be >= 1");
  if (qr_epochs < 0 || epochs < 0)
    throw ValidationError("epoch counts must be >= 0");
  if (!(qr_lr > 0.0) || !(lr > 0.0))
    throw ValidationError("learning rates must be > 0");
  if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
  if (!(nms_threshold > 0.0 && nms_threshold <= 1.0))
    throw ValidationError("eval.nms_threshold must be in (0,1]");
  if (visual_ladder.empty() || text_ladder.empty())
    throw ValidationError("noise ladders must be non-empty");
}

ModelConfig RunConfig::model_config() const {
  ModelConfig mc;
  mc.dim = data.dim;
  mc.n_rff = n_rff;
  mc.vocab_size = data.vocab_size;
  mc.qr_hidden = qr_hidden;
  mc.fusion = parse_fusion_kind(fusion);
  mc.qr_enabled = qr_enabled;
  return mc;
}

RunConfig default_config() {
  RunConfig c;
  c.data.seed = c.seed;
  return c;
}

namespace {

// One row per key keeps parsing, serialization and the unknown-key check in
// a single table.
struct KeyBinding {
  const char* key;
  std::function<void(RunConfig&, const ordered_json&)> read;
  std::function<ordered_json(const RunConfig&)> write;
};

ordered_json to_json_ladder(const std::vector<double>& v) {
  return ordered_json(v);
}

std::vector<double> ladder_from_json(const ordered_json& j, const char* key) {
  if (!j.is_array())
    throw ValidationError(std::string("config key '") + key +
                          "' must be an array of numbers");
  std::vector<double> out;
  for (const auto& x : j) {
    if (!x.is_number())
      throw ValidationError(std::string("config key '") + key +
                            "' must contain only numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

template <typename T>
T typed(const ordered_json& j, const char* key) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string("config key '") + key +
                          "' has the wrong type");
  }
}

const std::vector<KeyBinding>& bindings() {
  static const std::vector<KeyBinding> kBindings = {
      {"seed",
       [](RunConfig& c, const ordered_json& j) {
         c.seed = typed<std::uint64_t>(j, "seed");
       },
       [](const RunConfig& c) { return ordered_json(c.seed); }},
      {"data.n_samples",
       [](RunConfig& c, const ordered_json& j) {
         c.data.n_samples = typed<int>(j, "data.n_samples");
       },
       [](const RunConfig& c) { return ordered_json(c.data.n_samples); }},
      {"data.clips",
       [](RunConfig& c, const ordered_json& j) {
         c.data.clips = typed<int>(j, "data.clips");
       },
       [](const RunConfig& c) { return ordered_json(c.data.clips); }},
      {"data.dim",
       [](RunConfig& c, const ordered_json& j) {
         c.data.dim = typed<int>(j, "data.dim");
       },
       [](const RunConfig& c) { return ordered_json(c.data.dim); }},
      {"data.vocab_size",
       [](RunConfig& c, const ordered_json& j) {
         c.data.vocab_size = typed<int>(j, "data.vocab_size");
       },
       [](const RunConfig& c) { return ordered_json(c.data.vocab_size); }},
      {"data.n_concepts",
       [](RunConfig& c, const ordered_json& j) {
         c.data.n_concepts = typed<int>(j, "data.n_concepts");
       },
       [](const RunConfig& c) { return ordered_json(c.data.n_concepts); }},
      {"data.query_len",
       [](RunConfig& c, const ordered_json& j) {
         c.data.query_len = typed<int>(j, "data.query_len");
       },
       [](const RunConfig& c) { return ordered_json(c.data.query_len); }},
      {"data.jitter_min",
       [](RunConfig& c, const ordered_json& j) {
         c.data.jitter_min = typed<double>(j, "data.jitter_min");
       },
       [](const RunConfig& c) { return ordered_json(c.data.jitter_min); }},
      {"data.jitter_max",
       [](RunConfig& c, const ordered_json& j) {
         c.data.jitter_max = typed<double>(j, "data.jitter_max");
       },
       [](const RunConfig& c) { return ordered_json(c.data.jitter_max); }},
      {"bias.mode",
       [](RunConfig& c, const ordered_json& j) {
         c.bias.mode = parse_bias_mode(typed<std::string>(j, "bias.mode"));
       },
       [](const RunConfig& c) { return ordered_json(to_string(c.bias.mode)); }},
      {"bias.start_conc",
       [](RunConfig& c, const ordered_json& j) {
         c.bias.start_conc = typed<double>(j, "bias.start_conc");
       },
       [](const RunConfig& c) { return ordered_json(c.bias.start_conc); }},
      {"bias.len_conc",
       [](RunConfig& c, const ordered_json& j) {
         c.bias.len_conc = typed<double>(j, "bias.len_conc");
       },
       [](const RunConfig& c) { return ordered_json(c.bias.len_conc); }},
      {"bias.len_min",
       [](RunConfig& c, const ordered_json& j) {
         c.bias.len_min = typed<double>(j, "bias.len_min");
       },
       [](const RunConfig& c) { return ordered_json(c.bias.len_min); }},
      {"bias.len_max",
       [](RunConfig& c, const ordered_json& j) {
         c.bias.len_max = typed<double>(j, "bias.len_max");
       },
       [](const RunConfig& c) { return ordered_json(c.bias.len_max); }},
      {"noise.visual_sigma",
       [](RunConfig& c, const ordered_json& j) {
         c.noise.visual_sigma = typed<double>(j, "noise.visual_sigma");
       },
       [](const RunConfig& c) { return ordered_json(c.noise.visual_sigma); }},
      {"noise.text_replace_ratio",
       [](RunConfig& c, const ordered_json& j) {
         c.noise.text_replace_ratio =
             typed<double>(j, "noise.text_replace_ratio");
       },
       [](const RunConfig& c) {
         return ordered_json(c.noise.text_replace_ratio);
       }},
      {"model.fusion",
       [](RunConfig& c, const ordered_json& j) {
         c.fusion = typed<std::string>(j, "model.fusion");
       },
       [](const RunConfig& c) { return ordered_json(c.fusion); }},
      {"model.n_rff",
       [](RunConfig& c, const ordered_json& j) {
         c.n_rff = typed<int>(j, "model.n_rff");
       },
       [](const RunConfig& c) { return ordered_json(c.n_rff); }},
      {"model.qr_hidden",
       [](RunConfig& c, const ordered_json& j) {
         c.qr_hidden = typed<int>(j, "model.qr_hidden");
       },
       [](const RunConfig& c) { return ordered_json(c.qr_hidden); }},
      {"model.qr_enabled",
       [](RunConfig& c, const ordered_json& j) {
         c.qr_enabled = typed<bool>(j, "model.qr_enabled");
       },
       [](const RunConfig& c) { return ordered_json(c.qr_enabled); }},
      {"loss.mode",
       [](RunConfig& c, const ordered_json& j) {
         c.mode = typed<std::string>(j, "loss.mode");
       },
       [](const RunConfig& c) { return ordered_json(c.mode); }},
      {"loss.lambda_l1",
       [](RunConfig& c, const ordered_json& j) {
         c.weights.l1 = typed<double>(j, "loss.lambda_l1");
       },
       [](const RunConfig& c) { return ordered_json(c.weights.l1); }},
      {"loss.lambda_iou",
       [](RunConfig& c, const ordered_json& j) {
         c.weights.iou = typed<double>(j, "loss.lambda_iou");
       },
       [](const RunConfig& c) { return ordered_json(c.weights.iou); }},
      {"loss.lambda_nll",
       [](RunConfig& c, const ordered_json& j) {
         c.weights.nll = typed<double>(j, "loss.lambda_nll");
       },
       [](const RunConfig& c) { return ordered_json(c.weights.nll); }},
      {"loss.lambda_geom",
       [](RunConfig& c, const ordered_json& j) {
         c.weights.geom = typed<double>(j, "loss.lambda_geom");
       },
       [](const RunConfig& c) { return ordered_json(c.weights.geom); }},
      {"loss.lambda_reg",
       [](RunConfig& c, const ordered_json& j) {
         c.weights.reg = typed<double>(j, "loss.lambda_reg");
       },
       [](const RunConfig& c) { return ordered_json(c.weights.reg); }},
      {"loss.lambda_der",
       [](RunConfig& c, const ordered_json& j) {
         c.weights.der = typed<double>(j, "loss.lambda_der");
       },
       [](const RunConfig& c) { return ordered_json(c.weights.der); }},
      {"train.qr_epochs",
       [](RunConfig& c, const ordered_json& j) {
         c.qr_epochs = typed<int>(j, "train.qr_epochs");
       },
       [](const RunConfig& c) { return ordered_json(c.qr_epochs); }},
      {"train.qr_lr",
       [](RunConfig& c, const ordered_json& j) {
         c.qr_lr = typed<double>(j, "train.qr_lr");
       },
       [](const RunConfig& c) { return ordered_json(c.qr_lr); }},
      {"train.epochs",
       [](RunConfig& c, const ordered_json& j) {
         c.epochs = typed<int>(j, "train.epochs");
       },
       [](const RunConfig& c) { return ordered_json(c.epochs); }},
      {"train.lr",
       [](RunConfig& c, const ordered_json& j) {
         c.lr = typed<double>(j, "train.lr");
       },
       [](const RunConfig& c) { return ordered_json(c.lr); }},
      {"train.batch_size",
       [](RunConfig& c, const ordered_json& j) {
         c.batch_size = typed<int>(j, "train.batch_size");
       },
       [](const RunConfig& c) { return ordered_json(c.batch_size); }},
      {"train.mask_policy",
       [](RunConfig& c, const ordered_json& j) {
         c.mask_policy = typed<std::string>(j, "train.mask_policy");
       },
       [](const RunConfig& c) { return ordered_json(c.mask_policy); }},
      {"train.mask_ratio",
       [](RunConfig& c, const ordered_json& j) {
         c.mask_ratio = typed<double>(j, "train.mask_ratio");
       },
       [](const RunConfig& c) { return ordered_json(c.mask_ratio); }},
      {"split.train_frac",
       [](RunConfig& c, const ordered_json& j) {
         c.split.train_frac = typed<double>(j, "split.train_frac");
       },
       [](const RunConfig& c) { return ordered_json(c.split.train_frac); }},
      {"split.ood_quantile",
       [](RunConfig& c, const ordered_json& j) {
         c.split.ood_quantile = typed<double>(j, "split.ood_quantile");
       },
       [](const RunConfig& c) { return ordered_json(c.split.ood_quantile); }},
      {"eval.nms_threshold",
       [](RunConfig& c, const ordered_json& j) {
         c.nms_threshold = typed<double>(j, "eval.nms_threshold");
       },
       [](const RunConfig& c) { return ordered_json(c.nms_threshold); }},
      {"eval.visual_ladder",
       [](RunConfig& c, const ordered_json& j) {
         c.visual_ladder = ladder_from_json(j, "eval.visual_ladder");
       },
       [](const RunConfig& c) { return to_json_ladder(c.visual_ladder); }},
      {"eval.text_ladder",
       [](RunConfig& c, const ordered_json& j) {
         c.text_ladder = ladder_from_json(j, "eval.text_ladder");
       },
       [](const RunConfig& c) { return to_json_ladder(c.text_ladder); }},
  };
  return kBindings;
}

}  // namespace

RunConfig parse_config_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config must be a JSON object");

  RunConfig cfg = default_config();
  const auto& binds = bindings();
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const auto& b : binds)
      if (key == b.key) {
        b.read(cfg, value);
        known = true;
        break;
      }
    if (!known)
      throw ValidationError("unknown config key '" + key + "'");
  }
  cfg.data.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_json(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
  ordered_json j;
  for (const auto& b : bindings()) j[b.key] = b.write(cfg);
  return j.dump(2) + "\n";
}

std::uint64_t config_hash(const RunConfig& cfg) {
  const std::string s = serialize_config(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace demr
