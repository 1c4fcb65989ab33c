#pragma once

#include <string>
#include <vector>

#include "demr/evidential.hpp"

namespace demr {

/// Error/evidence pair of one prediction: delta = |b - gamma|,
/// phi = 2*upsilon + alpha.
struct EvidencePair {
  double delta;
  double phi;
};

/// Batch-normalized pair, both components in [0, 1].
struct NormalizedPair {
  double delta_bar;
  double phi_bar;
};

// The four evidential training configurations compared by the diagnostics.
enum class RegularizerMode { none, nll_only, vanilla, geom };

RegularizerMode parse_regularizer_mode(const std::string& s);
std::string to_string(RegularizerMode m);

/// Scalar loss value together with its derivative in the evidence direction.
struct RegValueGrad {
  double value;
  double d_phi;    // d value / d phi (or d phi_bar for the geom form)
  double d_delta;  // d value / d delta (or d delta_bar)
};

EvidencePair evidence_pair(double b, const NIGParams& p);

/// loss = delta * phi. The minus gradient w.r.t. evidence is -delta: never
/// positive, independent of the current evidence level.
RegValueGrad vanilla_regularizer(const EvidencePair& pair);

/// Per-batch max-normalization with an eps floor; the max statistics are
/// treated as constants (no gradient flows through them).
std::vector<NormalizedPair> normalize_batch(const std::vector<EvidencePair>& pairs);

/// loss = (delta_bar + phi_bar - 1)^2. The minus gradient w.r.t. evidence is
/// -2(delta_bar + phi_bar - 1): positive below the line delta_bar+phi_bar=1,
/// negative above it.
RegValueGrad geom_regularizer(const NormalizedPair& np);

struct FieldPoint {
  double delta;
  double phi;
  double minus_grad;
};

/// Dense grid over [0,1]^2 of the minus gradient with respect to evidence,
/// for plotting. resolution points per axis, endpoints included.
std::vector<FieldPoint> sample_gradient_field(RegularizerMode mode,
                                              int resolution);

}  // namespace demr
