#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "demr/rng.hpp"
#include "demr/span.hpp"
#include "demr/tensor.hpp"

namespace demr {

/// Token inventory: one MASK token (id 0) followed by the noun, verb and
/// attribute classes in equal thirds. Concept k binds to noun token
/// noun_begin + k.
struct VocabLayout {
  int size = 0;
  int mask_id = 0;
  int noun_begin = 0, noun_end = 0;  // [begin, end)
  int verb_begin = 0, verb_end = 0;
  int attr_begin = 0, attr_end = 0;

  static VocabLayout make(int vocab_size);
  int noun_count() const { return noun_end - noun_begin; }
  bool is_noun(int tok) const { return tok >= noun_begin && tok < noun_end; }
};

struct SynthConfig {
  int n_samples = 320;
  int clips = 32;       // L_v
  int dim = 16;         // D, last channel carries the normalized clip index
  int vocab_size = 64;
  int n_concepts = 16;
  int query_len = 6;
  double jitter_min = 0.05;  // per-sample feature noise level range
  double jitter_max = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
  VocabLayout vocab() const { return VocabLayout::make(vocab_size); }
};

/// Span sampler. uniform draws the span center uniformly (edge spans are
/// shifted inward keeping their length); biased concentrates starts toward
/// the beginning of the video and lengths toward short spans.
struct BiasSpec {
  enum class Mode { uniform, biased };
  Mode mode = Mode::biased;
  double start_conc = 4.0;
  double len_conc = 3.0;
  double len_min = 0.08;
  double len_max = 0.2;

  void validate() const;
};

BiasSpec::Mode parse_bias_mode(const std::string& s);
std::string to_string(BiasSpec::Mode m);

struct NoiseSpec {
  double visual_sigma = 0.0;        // additive Gaussian std on video features
  double text_replace_ratio = 0.0;  // per-token replacement probability

  void validate() const;
};

struct Sample {
  Tensor2D video;          // L_v x D
  std::vector<int> query;  // token ids
  MomentSpan gt;
  int concept_id = 0;
};

struct Dataset {
  SynthConfig cfg;
  BiasSpec bias;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

/// Center of clip i in normalized time.
inline double clip_center(int i, int n_clips) {
  return (i + 0.5) / n_clips;
}

/// Indices of clips whose center lies inside the span.
std::vector<int> foreground_clips(const MomentSpan& gt, int n_clips);

MomentSpan draw_span(const BiasSpec& bias, Rng& rng);

/// Probability density of (start, length) under the biased sampler;
/// used to identify low-density regions when carving the OOD split.
double biased_span_density(const BiasSpec& bias, const MomentSpan& span);

Dataset generate_dataset(const SynthConfig& cfg, const BiasSpec& bias);

/// Adds N(0, sigma^2) noise to every video feature except the positional
/// channel. sigma = 0 is the identity.
Sample inject_visual_noise(const Sample& s, const NoiseSpec& spec,
                           std::uint64_t seed);

/// Replaces each non-MASK token with probability text_replace_ratio by a
/// token drawn from outside the sample's own concept.
Sample inject_text_noise(const Sample& s, const NoiseSpec& spec,
                         std::uint64_t seed, const VocabLayout& vocab);

struct MaskPolicy {
  enum class Kind { one_noun, ratio, all_nouns };
  Kind kind = Kind::one_noun;
  double r = 0.15;  // only for Kind::ratio

  static MaskPolicy parse(const std::string& name, double ratio);
};

struct MaskedQuery {
  std::vector<int> tokens;          // query with MASK substituted
  std::vector<int> mask_positions;  // strictly increasing
  std::vector<int> targets;         // original tokens at mask positions
};

MaskedQuery mask_for_qr(const Sample& s, const MaskPolicy& policy,
                        std::uint64_t seed, const VocabLayout& vocab);

struct SplitSpec {
  double train_frac = 0.8;
  double ood_quantile = 0.25;

  void validate() const;
};

struct Splits {
  Dataset train;
  Dataset test_iid;
  Dataset test_ood;
};

/// train/test_iid partition the biased dataset; test_ood is freshly drawn
/// with uniform spans, filtered to spans whose biased-sampler density falls
/// below the configured quantile of the training densities.
Splits split_iid_ood(const Dataset& ds, const BiasSpec& bias,
                     const SplitSpec& spec);

// Flat little-endian export ("DEMRDS01") plus a JSON sidecar with the
// generating config at <path>.json.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace demr
