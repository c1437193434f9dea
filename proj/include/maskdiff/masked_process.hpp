#pragma once

#include <cmath>
#include <limits>
#include <span>

#include "maskdiff/errors.hpp"
#include "maskdiff/rng.hpp"
#include "maskdiff/schedules.hpp"
#include "maskdiff/tokens.hpp"

// Per-token kernels of the absorbing-MASK forward process. Positions are
// independent, so sequence-level laws are products of these.
namespace maskdiff {

namespace detail {

inline void check_times(double s, double t) {
  if (!(s >= 0.0 && t <= 1.0)) throw DomainError("times must lie in [0,1]");
  if (!(s < t)) throw PreconditionError("need s < t");
}

inline void check_clean(Token x, int vocab) {
  if (x == kMask) throw PreconditionError("clean token expected, got MASK");
  if (x < 0 || x >= vocab) throw PreconditionError("token outside vocabulary");
}

}  // namespace detail

// Probability that a masked token at time t is revealed by time s:
// (alpha_s - alpha_t) / (1 - alpha_t).
inline double unmask_probability(const Schedule& schedule, double s, double t) {
  return (schedule.alpha(s) - schedule.alpha(t)) / schedule.mask_prob(t);
}

// q(z_t | x): alpha_t on x, 1 - alpha_t on MASK.
inline TokenDist marginal(const Schedule& schedule, double t, Token x, int vocab) {
  detail::check_clean(x, vocab);
  TokenDist d(vocab);
  d[x] = schedule.alpha(t);
  d[kMask] = schedule.mask_prob(t);
  return d;
}

// q(z_t | z_s). A clean token survives with probability alpha_t / alpha_s;
// MASK is absorbing.
inline TokenDist transition(const Schedule& schedule, double s, double t, Token token, int vocab) {
  detail::check_times(s, t);
  if (token == kMask) return TokenDist::delta(kMask, vocab);
  detail::check_clean(token, vocab);
  const double as = schedule.alpha(s);
  if (as == 0.0) throw InconsistentStateError("clean token at a time where alpha_s = 0");
  TokenDist d(vocab);
  d[token] = schedule.alpha(t) / as;
  d[kMask] = 1.0 - d[token];
  return d;
}

// q(z_s | z_t, x) in closed form.
inline TokenDist posterior(const Schedule& schedule, double s, double t, Token z, Token x, int vocab) {
  detail::check_times(s, t);
  detail::check_clean(x, vocab);
  if (z != kMask) {
    if (z != x) throw InconsistentStateError("z_t is neither x nor MASK");
    return TokenDist::delta(z, vocab);
  }
  const double mt = schedule.mask_prob(t);
  if (mt == 0.0) throw InconsistentStateError("MASK at a time where alpha_t = 1");
  TokenDist d(vocab);
  d[kMask] = schedule.mask_prob(s) / mt;
  d[x] = (schedule.alpha(s) - schedule.alpha(t)) / mt;
  return d;
}

// q(z_s | z_t, x) by explicit Bayes rule over the V+1 values of z_s:
// q(z_t | z_s) q(z_s | x), normalised.
inline TokenDist bayes_posterior_oracle(const Schedule& schedule, double s, double t, Token z, Token x, int vocab) {
  detail::check_times(s, t);
  const TokenDist prior = marginal(schedule, s, x, vocab);
  TokenDist joint(vocab);
  double evidence = 0.0;
  for (int k = 0; k <= vocab; ++k) {
    const Token zs = k == vocab ? kMask : k;
    if (prior[zs] == 0.0) continue;
    const double lik = transition(schedule, s, t, zs, vocab)[z];
    joint[zs] = lik * prior[zs];
    evidence += joint[zs];
  }
  if (!(evidence > 0.0)) throw ConditioningError("conditioning on a zero-probability z_t");
  TokenDist out(vocab);
  for (int k = 0; k <= vocab; ++k) {
    const Token zs = k == vocab ? kMask : k;
    out[zs] = joint[zs] / evidence;
  }
  return out;
}

inline void check_distribution(std::span<const double> mu, double tol = 1e-9) {
  double sum = 0.0;
  for (double v : mu) {
    if (!(v >= 0.0)) throw PreconditionError("denoiser output has a negative or NaN entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > tol) throw PreconditionError("denoiser output is not normalised");
}

// p_theta(z_s | z_t) = q(z_s | z_t, x = mu).
inline TokenDist reverse_kernel(const Schedule& schedule, double s, double t, Token z, std::span<const double> mu) {
  detail::check_times(s, t);
  check_distribution(mu);
  const int vocab = static_cast<int>(mu.size());
  if (z != kMask) {
    detail::check_clean(z, vocab);
    return TokenDist::delta(z, vocab);
  }
  const double mt = schedule.mask_prob(t);
  if (mt == 0.0) throw InconsistentStateError("MASK at a time where alpha_t = 1");
  const double reveal = (schedule.alpha(s) - schedule.alpha(t)) / mt;
  TokenDist d(vocab);
  d[kMask] = schedule.mask_prob(s) / mt;
  for (int v = 0; v < vocab; ++v) d[v] = reveal * mu[v];
  return d;
}

// KL(q(z_s | z_t, x) || p_theta(z_s | z_t)) for a whole sequence at fixed z_t:
// sum over masked positions of reveal * (-log mu_p[x_p]).
inline double kl_term_closed_form(const Schedule& schedule, double s, double t, const TokenSeq& z, const TokenSeq& x,
                                  const Prediction& mu) {
  detail::check_times(s, t);
  if (z.size() != x.size() || mu.length() != x.size() || mu.vocab() != x.vocab())
    throw ShapeError("kl_term_closed_form: shape mismatch");
  const double reveal = unmask_probability(schedule, s, t);
  double kl = 0.0;
  for (std::size_t p = 0; p < z.size(); ++p) {
    if (!z.is_masked(p)) {
      if (z[p] != x[p]) throw InconsistentStateError("z_t is neither x nor MASK");
      continue;
    }
    if (reveal == 0.0) continue;
    const double q = mu(p, x[p]);
    if (q == 0.0) return std::numeric_limits<double>::infinity();
    kl += reveal * -std::log(q);
  }
  return kl;
}

// z_t ~ q(z_t | x): each token is masked independently with probability 1 - alpha_t.
inline TokenSeq sample_zt(const Schedule& schedule, double t, const TokenSeq& x, Rng& rng) {
  const double keep = schedule.alpha(t);
  TokenSeq z = x;
  for (std::size_t p = 0; p < x.size(); ++p)
    if (!(rng.uniform() < keep)) z.set(p, kMask);
  return z;
}

}  // namespace maskdiff
