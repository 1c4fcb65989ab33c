#include "demr/evidential.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace demr {

NIGParams::NIGParams(double g, double u, double a, double b)
    : gamma(g), upsilon(u), alpha(a), beta(b) {
  if (!std::isfinite(g) || !std::isfinite(u) || !std::isfinite(a) ||
      !std::isfinite(b))
    throw ValidationError("NIGParams: non-finite parameter");
  if (u <= 0.0) throw ValidationError("NIGParams: upsilon must be > 0");
  if (a <= 1.0) throw ValidationError("NIGParams: alpha must be > 1");
  if (b <= 0.0) throw ValidationError("NIGParams: beta must be > 0");
}

GaussianMoments::GaussianMoments(double m, double s2) : mu(m), sigma2(s2) {
  if (!std::isfinite(m) || !std::isfinite(s2) || s2 < 0.0)
    throw ValidationError("GaussianMoments: sigma2 must be >= 0 and finite");
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_gamma(double x) { return std::lgamma(x); }

double digamma(double x) {
  double acc = 0.0;
  while (x < 8.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // asymptotic series truncated at x^-8; error < 1e-12 for x >= 8
  double series = std::log(x) - 0.5 * inv -
                  inv2 * (1.0 / 12.0 -
                          inv2 * (1.0 / 120.0 -
                                  inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0))));
  return acc + series;
}

NIGParams constrain_raw_to_nig(const std::array<double, 4>& raw) {
  static const char* kNames[4] = {"gamma", "upsilon", "alpha", "beta"};
  for (int i = 0; i < 4; ++i)
    if (!std::isfinite(raw[i]))
      throw ValidationError(std::string("constrain_raw_to_nig: raw ") +
                            kNames[i] + " (component " + std::to_string(i) +
                            ") is not finite");
  return NIGParams(raw[0], softplus(raw[1]) + kEps,
                   softplus(raw[2]) + 1.0 + kEps, softplus(raw[3]) + kEps);
}

std::array<double, 4> constrain_jacobian(const std::array<double, 4>& raw) {
  return {1.0, sigmoid(raw[1]), sigmoid(raw[2]), sigmoid(raw[3])};
}

double student_t_nll(double b, const NIGParams& p) {
  const double e = b - p.gamma;
  const double omega = 2.0 * p.beta * (1.0 + p.upsilon);
  const double s = p.upsilon * e * e + omega;
  return 0.5 * std::log(std::numbers::pi / p.upsilon) -
         p.alpha * std::log(omega) + (p.alpha + 0.5) * std::log(s) +
         log_gamma(p.alpha) - log_gamma(p.alpha + 0.5);
}

std::array<double, 4> nll_gradients(double b, const NIGParams& p) {
  const double e = b - p.gamma;
  const double omega = 2.0 * p.beta * (1.0 + p.upsilon);
  const double s = p.upsilon * e * e + omega;
  const double ah = p.alpha + 0.5;

  const double d_gamma = -2.0 * ah * p.upsilon * e / s;
  const double d_upsilon = -0.5 / p.upsilon - p.alpha / (1.0 + p.upsilon) +
                           ah * (e * e + 2.0 * p.beta) / s;
  const double d_alpha =
      std::log(s) - std::log(omega) + digamma(p.alpha) - digamma(ah);
  const double d_beta = -p.alpha / p.beta + 2.0 * ah * (1.0 + p.upsilon) / s;
  return {d_gamma, d_upsilon, d_alpha, d_beta};
}

UncertaintyTriple nig_uncertainties(const NIGParams& p) {
  if (p.alpha <= 1.0 + kAlphaPole)
    throw NumericalError(
        "nig_uncertainties: alpha within the guard band of the alpha=1 pole");
  const double aleatoric = p.beta / (p.alpha - 1.0);
  return {p.gamma, aleatoric, aleatoric / p.upsilon};
}

}  // namespace demr
