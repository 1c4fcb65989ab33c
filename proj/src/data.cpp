#include "demr/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace demr {

namespace {

constexpr double kCentroidNorm = 1.5;
constexpr char kMagic[9] = "DEMRDS01";

}  // namespace

VocabLayout VocabLayout::make(int vocab_size) {
  if (vocab_size < 7)
    throw ValidationError("vocab_size must be >= 7 (MASK + three classes)");
  VocabLayout v;
  v.size = vocab_size;
  v.mask_id = 0;
  const int rest = vocab_size - 1;
  const int base = rest / 3;
  const int rem = rest % 3;
  const int nouns = base + (rem > 0 ? 1 : 0);
  const int verbs = base + (rem > 1 ? 1 : 0);
  v.noun_begin = 1;
  v.noun_end = v.noun_begin + nouns;
  v.verb_begin = v.noun_end;
  v.verb_end = v.verb_begin + verbs;
  v.attr_begin = v.verb_end;
  v.attr_end = vocab_size;
  return v;
}

void SynthConfig::validate() const {
  if (n_samples < 1) throw ValidationError("n_samples must be >= 1");
  if (clips < 2) throw ValidationError("clips must be >= 2");
  if (dim < 4) throw ValidationError("dim must be >= 4");
  if (query_len < 2) throw ValidationError("query_len must be >= 2");
  if (n_concepts < 2) throw ValidationError("n_concepts must be >= 2");
  const VocabLayout v = vocab();
  if (n_concepts > v.noun_count())
    throw ValidationError("n_concepts (" + std::to_string(n_concepts) +
                          ") exceeds noun class size (" +
                          std::to_string(v.noun_count()) + ")");
  if (jitter_min < 0.0 || jitter_max < jitter_min)
    throw ValidationError("need 0 <= jitter_min <= jitter_max");
}

void BiasSpec::validate() const {
  if (!(len_min > 0.0 && len_min < len_max && len_max <= 1.0))
    throw ValidationError("need 0 < len_min < len_max <= 1");
  if (start_conc < 1.0 || len_conc < 1.0)
    throw ValidationError("bias concentrations must be >= 1");
}

BiasSpec::Mode parse_bias_mode(const std::string& s) {
  if (s == "uniform") return BiasSpec::Mode::uniform;
  if (s == "biased") return BiasSpec::Mode::biased;
  throw ValidationError("unknown bias mode: '" + s + "'");
}

std::string to_string(BiasSpec::Mode m) {
  return m == BiasSpec::Mode::uniform ? "uniform" : "biased";
}

void NoiseSpec::validate() const {
  if (visual_sigma < 0.0) throw ValidationError("visual_sigma must be >= 0");
  if (text_replace_ratio < 0.0 || text_replace_ratio > 1.0)
    throw ValidationError("text_replace_ratio must be in [0,1]");
}

std::vector<int> foreground_clips(const MomentSpan& gt, int n_clips) {
  std::vector<int> fg;
  for (int i = 0; i < n_clips; ++i) {
    const double c = clip_center(i, n_clips);
    if (c >= gt.start && c <= gt.end) fg.push_back(i);
  }
  return fg;
}

MomentSpan draw_span(const BiasSpec& bias, Rng& rng) {
  if (bias.mode == BiasSpec::Mode::uniform) {
    const double len = rng.uniform(bias.len_min, bias.len_max);
    const double center = rng.uniform();
    double s = center - 0.5 * len;
    if (s < 0.0) s = 0.0;
    double e = s + len;
    if (e > 1.0) {
      e = 1.0;
      s = 1.0 - len;
    }
    return MomentSpan(s, e);
  }
  const double len =
      bias.len_min + (bias.len_max - bias.len_min) * rng.beta_one(bias.len_conc);
  const double start = (1.0 - len) * rng.beta_one(bias.start_conc);
  return MomentSpan(start, start + len);
}

double biased_span_density(const BiasSpec& bias, const MomentSpan& span) {
  const double len = span.end - span.start;
  const double range = bias.len_max - bias.len_min;
  const double x = (len - bias.len_min) / range;
  if (x < 0.0 || x > 1.0) return 0.0;
  const double f_len =
      bias.len_conc * std::pow(1.0 - x, bias.len_conc - 1.0) / range;
  const double y = span.start / (1.0 - len);
  if (y < 0.0 || y > 1.0) return 0.0;
  const double f_start = bias.start_conc *
                         std::pow(1.0 - y, bias.start_conc - 1.0) /
                         (1.0 - len);
  return f_len * f_start;
}

namespace {

std::vector<std::vector<double>> make_centroids(const SynthConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "concepts"));
  std::vector<std::vector<double>> centroids(cfg.n_concepts);
  for (auto& c : centroids) {
    c.resize(cfg.dim - 1);
    double norm2 = 0.0;
    for (double& x : c) {
      x = rng.normal();
      norm2 += x * x;
    }
    const double scale = kCentroidNorm / std::sqrt(norm2);
    for (double& x : c) x *= scale;
  }
  return centroids;
}

Sample make_sample(const SynthConfig& cfg,
                   const std::vector<std::vector<double>>& centroids,
                   const MomentSpan& span, Rng& rng) {
  const int concept_id = rng.uniform_int(0, cfg.n_concepts - 1);
  const double jitter = rng.uniform(cfg.jitter_min, cfg.jitter_max);

  // contiguous distractor segments outside the span, so the target segment
  // is only identifiable through the query
  std::vector<int> clip_concept(cfg.clips, -1);
  for (int fg : foreground_clips(span, cfg.clips)) clip_concept[fg] = concept_id;
  int block_left = 0;
  int block_concept = -1;
  for (int i = 0; i < cfg.clips; ++i) {
    if (clip_concept[i] >= 0) {
      block_left = 0;
      continue;
    }
    if (block_left == 0) {
      block_left = rng.uniform_int(2, 6);
      do {
        block_concept = rng.uniform_int(0, cfg.n_concepts - 1);
      } while (block_concept == concept_id);
    }
    clip_concept[i] = block_concept;
    --block_left;
  }

  Sample s{Tensor2D(cfg.clips, cfg.dim), {}, span, concept_id};
  for (int i = 0; i < cfg.clips; ++i) {
    const auto& c = centroids[clip_concept[i]];
    for (int d = 0; d + 1 < cfg.dim; ++d)
      s.video.at(i, d) = c[d] + jitter * rng.normal();
    s.video.at(i, cfg.dim - 1) = clip_center(i, cfg.clips);
  }

  const VocabLayout v = cfg.vocab();
  s.query.resize(cfg.query_len);
  for (int p = 0; p < cfg.query_len; ++p) {
    switch (p % 3) {
      case 0:
        s.query[p] = rng.uniform_int(v.attr_begin, v.attr_end - 1);
        break;
      case 1:
        s.query[p] = v.noun_begin + concept_id;
        break;
      default:
        s.query[p] = rng.uniform_int(v.verb_begin, v.verb_end - 1);
        break;
    }
  }
  return s;
}

}  // namespace

Dataset generate_dataset(const SynthConfig& cfg, const BiasSpec& bias) {
  cfg.validate();
  bias.validate();
  const auto centroids = make_centroids(cfg);
  Dataset ds{cfg, bias, {}};
  ds.samples.reserve(cfg.n_samples);
  for (int i = 0; i < cfg.n_samples; ++i) {
    Rng rng(derive_seed(cfg.seed, "sample", static_cast<std::uint64_t>(i)));
    const MomentSpan span = draw_span(bias, rng);
    ds.samples.push_back(make_sample(cfg, centroids, span, rng));
  }
  return ds;
}

Sample inject_visual_noise(const Sample& s, const NoiseSpec& spec,
                           std::uint64_t seed) {
  spec.validate();
  if (spec.visual_sigma == 0.0) return s;
  Sample out = s;
  Rng rng(derive_seed(seed, "visual_noise"));
  for (int i = 0; i < out.video.rows; ++i)
    for (int d = 0; d + 1 < out.video.cols; ++d)
      out.video.at(i, d) += spec.visual_sigma * rng.normal();
  return out;
}

Sample inject_text_noise(const Sample& s, const NoiseSpec& spec,
                         std::uint64_t seed, const VocabLayout& vocab) {
  spec.validate();
  if (spec.text_replace_ratio == 0.0) return s;
  Sample out = s;
  Rng rng(derive_seed(seed, "text_noise"));
  const int own_noun = vocab.noun_begin + s.concept_id;
  for (int& tok : out.query) {
    if (tok == vocab.mask_id) continue;
    if (rng.uniform() < spec.text_replace_ratio) {
      int repl;
      do {
        repl = rng.uniform_int(1, vocab.size - 1);
      } while (repl == own_noun || repl == tok);
      tok = repl;
    }
  }
  return out;
}

MaskPolicy MaskPolicy::parse(const std::string& name, double ratio) {
  MaskPolicy p;
  if (name == "one_noun") {
    p.kind = Kind::one_noun;
  } else if (name == "all_nouns") {
    p.kind = Kind::all_nouns;
  } else if (name == "ratio") {
    p.kind = Kind::ratio;
    if (ratio < 0.0 || ratio > 1.0)
      throw ValidationError("mask ratio must be in [0,1]");
    p.r = ratio;
  } else {
    throw ValidationError("unknown mask policy: '" + name + "'");
  }
  return p;
}

MaskedQuery mask_for_qr(const Sample& s, const MaskPolicy& policy,
                        std::uint64_t seed, const VocabLayout& vocab) {
  std::vector<int> noun_positions;
  for (std::size_t p = 0; p < s.query.size(); ++p)
    if (vocab.is_noun(s.query[p])) noun_positions.push_back(static_cast<int>(p));

  std::vector<int> positions;
  Rng rng(derive_seed(seed, "mask"));
  switch (policy.kind) {
    case MaskPolicy::Kind::one_noun: {
      if (noun_positions.empty())
        throw ValidationError("mask_for_qr: query contains no noun token");
      positions.push_back(noun_positions[rng.uniform_int(
          0, static_cast<int>(noun_positions.size()) - 1)]);
      break;
    }
    case MaskPolicy::Kind::all_nouns: {
      if (noun_positions.empty())
        throw ValidationError("mask_for_qr: query contains no noun token");
      positions = noun_positions;
      break;
    }
    case MaskPolicy::Kind::ratio: {
      for (std::size_t p = 0; p < s.query.size(); ++p)
        if (rng.uniform() < policy.r) positions.push_back(static_cast<int>(p));
      break;
    }
  }

  MaskedQuery mq;
  mq.tokens = s.query;
  for (int p : positions) {
    mq.mask_positions.push_back(p);
    mq.targets.push_back(s.query[p]);
    mq.tokens[p] = vocab.mask_id;
  }
  return mq;
}

void SplitSpec::validate() const {
  if (!(train_frac > 0.0 && train_frac <= 1.0))
    throw ValidationError("train_frac must be in (0,1]");
  if (ood_quantile < 0.0 || ood_quantile > 1.0)
    throw ValidationError("ood_quantile must be in [0,1]");
}

Splits split_iid_ood(const Dataset& ds, const BiasSpec& bias,
                     const SplitSpec& spec) {
  spec.validate();
  const int n = static_cast<int>(ds.size());
  const int n_train = std::min(
      n, std::max(1, static_cast<int>(std::lround(spec.train_frac * n))));

  Splits out{{ds.cfg, bias, {}}, {ds.cfg, bias, {}}, {ds.cfg, bias, {}}};
  out.test_ood.bias.mode = BiasSpec::Mode::uniform;
  out.train.samples.assign(ds.samples.begin(), ds.samples.begin() + n_train);
  out.test_iid.samples.assign(ds.samples.begin() + n_train, ds.samples.end());

  std::vector<double> densities;
  densities.reserve(n_train);
  for (const auto& s : out.train.samples)
    densities.push_back(biased_span_density(bias, s.gt));
  std::sort(densities.begin(), densities.end());
  const double threshold =
      densities[static_cast<std::size_t>(spec.ood_quantile * (n_train - 1))];

  const int ood_target = n - n_train;
  const auto centroids = make_centroids(ds.cfg);
  BiasSpec uniform_bias = bias;
  uniform_bias.mode = BiasSpec::Mode::uniform;
  const long max_attempts = 200L * std::max(1, ood_target);
  for (long attempt = 0;
       attempt < max_attempts &&
       static_cast<int>(out.test_ood.samples.size()) < ood_target;
       ++attempt) {
    Rng rng(derive_seed(ds.cfg.seed, "ood", static_cast<std::uint64_t>(attempt)));
    const MomentSpan span = draw_span(uniform_bias, rng);
    if (biased_span_density(bias, span) >= threshold) continue;
    out.test_ood.samples.push_back(make_sample(ds.cfg, centroids, span, rng));
  }
  if (static_cast<int>(out.test_ood.samples.size()) < ood_target)
    throw ValidationError(
        "split_iid_ood: could not draw enough low-density OOD spans; "
        "raise ood_quantile or widen the span range");
  return out;
}

// ---------------------------------------------------------------------------
// Binary export/import

namespace {

void put_u32(std::ostream& o, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  o.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& o, std::uint64_t v) {
  put_u32(o, static_cast<std::uint32_t>(v));
  put_u32(o, static_cast<std::uint32_t>(v >> 32));
}

void put_f64(std::ostream& o, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(o, v);
}

std::uint32_t get_u32(std::istream& i) {
  unsigned char b[4];
  i.read(reinterpret_cast<char*>(b), 4);
  if (!i) throw ValidationError("dataset file truncated");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& i) {
  const std::uint64_t lo = get_u32(i);
  const std::uint64_t hi = get_u32(i);
  return lo | (hi << 32);
}

double get_f64(std::istream& i) {
  const std::uint64_t v = get_u64(i);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open '" + path + "' for writing");
  f.write(kMagic, 8);
  put_u32(f, 1);  // version
  put_u32(f, static_cast<std::uint32_t>(ds.samples.size()));
  put_u32(f, static_cast<std::uint32_t>(ds.cfg.clips));
  put_u32(f, static_cast<std::uint32_t>(ds.cfg.dim));
  put_u32(f, static_cast<std::uint32_t>(ds.cfg.query_len));
  put_u32(f, static_cast<std::uint32_t>(ds.cfg.vocab_size));
  put_u32(f, static_cast<std::uint32_t>(ds.cfg.n_concepts));
  put_f64(f, ds.cfg.jitter_min);
  put_f64(f, ds.cfg.jitter_max);
  put_u64(f, ds.cfg.seed);
  put_u32(f, ds.bias.mode == BiasSpec::Mode::uniform ? 0u : 1u);
  put_f64(f, ds.bias.start_conc);
  put_f64(f, ds.bias.len_conc);
  put_f64(f, ds.bias.len_min);
  put_f64(f, ds.bias.len_max);
  for (const auto& s : ds.samples) {
    put_u32(f, static_cast<std::uint32_t>(s.concept_id));
    put_f64(f, s.gt.start);
    put_f64(f, s.gt.end);
    for (int tok : s.query) put_u32(f, static_cast<std::uint32_t>(tok));
    for (double x : s.video.data) put_f64(f, x);
  }
  if (!f) throw ValidationError("write failed for '" + path + "'");
  f.close();

  nlohmann::ordered_json j;
  j["data.n_samples"] = ds.cfg.n_samples;
  j["data.clips"] = ds.cfg.clips;
  j["data.dim"] = ds.cfg.dim;
  j["data.vocab_size"] = ds.cfg.vocab_size;
  j["data.n_concepts"] = ds.cfg.n_concepts;
  j["data.query_len"] = ds.cfg.query_len;
  j["data.jitter_min"] = ds.cfg.jitter_min;
  j["data.jitter_max"] = ds.cfg.jitter_max;
  j["seed"] = ds.cfg.seed;
  j["bias.mode"] = to_string(ds.bias.mode);
  j["bias.start_conc"] = ds.bias.start_conc;
  j["bias.len_conc"] = ds.bias.len_conc;
  j["bias.len_min"] = ds.bias.len_min;
  j["bias.len_max"] = ds.bias.len_max;
  std::ofstream side(path + ".json");
  side << j.dump(2) << "\n";
}

Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open '" + path + "'");
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw ValidationError("'" + path + "' is not a dataset file (bad magic)");
  const std::uint32_t version = get_u32(f);
  if (version != 1)
    throw ValidationError("unsupported dataset version " +
                          std::to_string(version));

  Dataset ds;
  const std::uint32_t n = get_u32(f);
  ds.cfg.clips = static_cast<int>(get_u32(f));
  ds.cfg.dim = static_cast<int>(get_u32(f));
  ds.cfg.query_len = static_cast<int>(get_u32(f));
  ds.cfg.vocab_size = static_cast<int>(get_u32(f));
  ds.cfg.n_concepts = static_cast<int>(get_u32(f));
  ds.cfg.jitter_min = get_f64(f);
  ds.cfg.jitter_max = get_f64(f);
  ds.cfg.seed = get_u64(f);
  ds.cfg.n_samples = static_cast<int>(n);
  ds.bias.mode = get_u32(f) == 0 ? BiasSpec::Mode::uniform
                                 : BiasSpec::Mode::biased;
  ds.bias.start_conc = get_f64(f);
  ds.bias.len_conc = get_f64(f);
  ds.bias.len_min = get_f64(f);
  ds.bias.len_max = get_f64(f);

  ds.samples.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const int concept_id = static_cast<int>(get_u32(f));
    const double start = get_f64(f);
    const double end = get_f64(f);
    Sample s{Tensor2D(ds.cfg.clips, ds.cfg.dim), {}, MomentSpan(start, end),
             concept_id};
    s.query.resize(ds.cfg.query_len);
    for (int& tok : s.query) tok = static_cast<int>(get_u32(f));
    for (double& x : s.video.data) x = get_f64(f);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace demr
