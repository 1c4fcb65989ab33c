#pragma once

#include <array>

#include "demr/errors.hpp"

namespace demr {

// Positivity floor used throughout the math core.
inline constexpr double kEps = 1e-6;

// Guard band around the alpha = 1 pole of the inverse-gamma moments.
inline constexpr double kAlphaPole = 1e-6;

/// Parameters of a Normal-Inverse-Gamma prior over a Gaussian's (mean,
/// variance). gamma is the location, upsilon a virtual observation count,
/// (alpha, beta) the inverse-gamma shape/rate.
struct NIGParams {
  double gamma;
  double upsilon;
  double alpha;
  double beta;

  NIGParams() : NIGParams(0.0, 1.0, 2.0, 1.0) {}
  NIGParams(double g, double u, double a, double b);
};

struct GaussianMoments {
  double mu;
  double sigma2;

  GaussianMoments(double m, double s2);
};

/// Closed-form uncertainty decomposition of an NIG prior:
/// prediction E[mu], aleatoric E[sigma^2], epistemic Var[mu].
struct UncertaintyTriple {
  double prediction;
  double aleatoric;
  double epistemic;
};

double softplus(double x);
double sigmoid(double x);

// log Gamma and digamma; digamma via recurrence + asymptotic series,
// relative error well under 1e-10 over the domains used here.
double log_gamma(double x);
double digamma(double x);

/// Maps four unconstrained head outputs onto the NIG domain:
/// gamma = raw0, upsilon = softplus(raw1)+eps, alpha = softplus(raw2)+1+eps,
/// beta = softplus(raw3)+eps.
NIGParams constrain_raw_to_nig(const std::array<double, 4>& raw);

/// Diagonal of the constraint map's Jacobian d(constrained)/d(raw);
/// composing it with nll_gradients gives raw-space gradients.
std::array<double, 4> constrain_jacobian(const std::array<double, 4>& raw);

/// Negative log likelihood of observation b under the Student-t predictive
/// St(b; gamma, beta(1+upsilon)/(upsilon*alpha), 2*alpha), evaluated through
/// the log-gamma expansion. Finite for every valid parameter set.
double student_t_nll(double b, const NIGParams& p);

/// Exact partials of student_t_nll with respect to (gamma, upsilon, alpha,
/// beta) in constrained space.
std::array<double, 4> nll_gradients(double b, const NIGParams& p);

/// (E[mu], E[sigma^2], Var[mu]) = (gamma, beta/(alpha-1), beta/(upsilon(alpha-1))).
/// Throws NumericalError when alpha sits within kAlphaPole of the pole.
UncertaintyTriple nig_uncertainties(const NIGParams& p);

}  // namespace demr
