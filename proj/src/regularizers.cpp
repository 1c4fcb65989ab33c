#include "demr/regularizers.hpp"

#include <algorithm>
#include <cmath>

namespace demr {

RegularizerMode parse_regularizer_mode(const std::string& s) {
  if (s == "none") return RegularizerMode::none;
  if (s == "nll_only") return RegularizerMode::nll_only;
  if (s == "vanilla") return RegularizerMode::vanilla;
  if (s == "geom") return RegularizerMode::geom;
  throw ValidationError("unknown regularizer mode: '" + s + "'");
}

std::string to_string(RegularizerMode m) {
  switch (m) {
    case RegularizerMode::none: return "none";
    case RegularizerMode::nll_only: return "nll_only";
    case RegularizerMode::vanilla: return "vanilla";
    case RegularizerMode::geom: return "geom";
  }
  return "?";
}

EvidencePair evidence_pair(double b, const NIGParams& p) {
  return {std::fabs(b - p.gamma), 2.0 * p.upsilon + p.alpha};
}

RegValueGrad vanilla_regularizer(const EvidencePair& pair) {
  return {pair.delta * pair.phi, pair.delta, pair.phi};
}

std::vector<NormalizedPair> normalize_batch(
    const std::vector<EvidencePair>& pairs) {
  if (pairs.empty())
    throw ValidationError("normalize_batch: empty batch");
  double max_delta = 0.0;
  double max_phi = 0.0;
  for (const auto& p : pairs) {
    max_delta = std::max(max_delta, p.delta);
    max_phi = std::max(max_phi, p.phi);
  }
  // eps floors the denominator only; dividing by the max itself keeps the
  // normalization an exact quotient (scale-invariant, idempotent)
  const double dd = std::max(max_delta, kEps);
  const double dp = std::max(max_phi, kEps);
  std::vector<NormalizedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs)
    out.push_back({p.delta / dd, p.phi / dp});
  return out;
}

RegValueGrad geom_regularizer(const NormalizedPair& np) {
  const double t = np.delta_bar + np.phi_bar - 1.0;
  return {t * t, 2.0 * t, 2.0 * t};
}

std::vector<FieldPoint> sample_gradient_field(RegularizerMode mode,
                                              int resolution) {
  if (mode != RegularizerMode::vanilla && mode != RegularizerMode::geom)
    throw ValidationError(
        "sample_gradient_field: mode must be vanilla or geom");
  if (resolution < 2)
    throw ValidationError("sample_gradient_field: resolution must be >= 2");

  std::vector<FieldPoint> field;
  field.reserve(static_cast<std::size_t>(resolution) * resolution);
  const double step = 1.0 / (resolution - 1);
  for (int i = 0; i < resolution; ++i) {
    const double delta = i * step;
    for (int j = 0; j < resolution; ++j) {
      const double phi = j * step;
      double minus_grad;
      if (mode == RegularizerMode::vanilla) {
        minus_grad = -vanilla_regularizer({delta, phi}).d_phi;
      } else {
        // factored form -2*(i+j-(res-1))*step so the zero set lands exactly
        // on the grid points of the line delta+phi = 1
        minus_grad = -2.0 * step * (i + j - (resolution - 1));
      }
      field.push_back({delta, phi, minus_grad});
    }
  }
  return field;
}

}  // namespace demr
