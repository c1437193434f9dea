#pragma once

#include <cmath>
#include <span>

#include "maskdiff/errors.hpp"
#include "maskdiff/schedules.hpp"
#include "maskdiff/weightings.hpp"

// Closed-form Gaussian-diffusion quantities, parameterised by a log-SNR
// curve. Pure formulas; nothing here samples or trains.
namespace maskdiff {

struct SnrCurve {
  GaussianLogSnr name = GaussianLogSnr::Iddpm;

  double log_snr(double t) const { return gaussian_log_snr(name, t); }
  double log_snr_prime(double t) const { return gaussian_log_snr_derivative(name, t); }
  double snr(double t) const { return std::exp(log_snr(t)); }
  double snr_prime(double t) const { return log_snr_prime(t) * snr(t); }
};

struct GaussianMarginal {
  double alpha;
  double sigma;
};

// Variance-preserving marginal with the curve's SNR: alpha^2 = sigmoid(lambda),
// sigma^2 = sigmoid(-lambda).
inline GaussianMarginal vp_marginal(const SnrCurve& curve, double t) {
  const double lambda = curve.log_snr(t);
  return {std::sqrt(1.0 / (1.0 + std::exp(-lambda))), std::sqrt(1.0 / (1.0 + std::exp(lambda)))};
}

// SNR(t) / SNR(s), in (0,1) for s < t.
inline double kappa(const SnrCurve& curve, double s, double t) {
  if (!(s < t)) throw PreconditionError("kappa: need s < t");
  return std::exp(curve.log_snr(t) - curve.log_snr(s));
}

// q(z_s | z_t, x) = N(x_coef x + z_coef z_t, variance), with alpha_0 = 1.
struct GaussianPosteriorParams {
  double x_coef;
  double z_coef;
  double variance;
};

inline GaussianPosteriorParams posterior_params(const SnrCurve& curve, const GaussianMarginal& at_s,
                                                const GaussianMarginal& at_t, double s, double t) {
  const double k = kappa(curve, s, t);
  constexpr double alpha0 = 1.0;
  return {(1.0 - k) * at_s.alpha / alpha0, k * at_s.alpha / at_t.alpha, at_s.sigma * at_s.sigma * (1.0 - k)};
}

inline GaussianPosteriorParams posterior_params(const SnrCurve& curve, double s, double t) {
  return posterior_params(curve, vp_marginal(curve, s), vp_marginal(curve, t), s, t);
}

// (1/2)(SNR(s) - SNR(t)) ||x - mu_hat||^2
inline double gaussian_kl_term(const SnrCurve& curve, double s, double t, std::span<const double> x,
                               std::span<const double> mu_hat) {
  if (x.size() != mu_hat.size()) throw ShapeError("gaussian_kl_term: dimension mismatch");
  if (!(s < t)) throw PreconditionError("gaussian_kl_term: need s < t");
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sq += (x[i] - mu_hat[i]) * (x[i] - mu_hat[i]);
  return 0.5 * (curve.snr(s) - curve.snr(t)) * sq;
}

// (1/2) w_tilde(t) lambda'(t) ||eps - eps_hat||^2 for a given weight value.
inline double weighted_integrand(double w_tilde_value, GaussianLogSnr name, double t, double eps_error_sq) {
  if (!(t > 0.0 && t < 1.0)) throw DomainError("weighted_integrand: lambda'(t) diverges at the endpoints");
  // w * lambda' written as w / (1 / lambda') so that w = 1 / lambda' cancels exactly
  return 0.5 * (w_tilde_value / (1.0 / gaussian_log_snr_derivative(name, t))) * eps_error_sq;
}

inline double weighted_integrand(const WeightingSpec& spec, GaussianLogSnr name, double t, double eps_error_sq) {
  if (spec.side != Side::Gaussian) throw UnsupportedError("weighted_integrand needs a Gaussian spec");
  return weighted_integrand(w_tilde(spec, Schedule::linear(), t), name, t, eps_error_sq);
}

// The DDPM "simple" weight 1 / lambda'(t).
inline double ddpm_simple_weight(GaussianLogSnr name, double t) { return 1.0 / gaussian_log_snr_derivative(name, t); }

}  // namespace maskdiff
