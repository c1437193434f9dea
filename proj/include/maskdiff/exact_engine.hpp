#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include "maskdiff/dataset.hpp"
#include "maskdiff/denoiser.hpp"
#include "maskdiff/errors.hpp"
#include "maskdiff/masked_process.hpp"
#include "maskdiff/schedules.hpp"
#include "maskdiff/tokens.hpp"
#include "maskdiff/weightings.hpp"

// Exact, enumeration-based evaluation of discrete-time ELBOs, optimal-decoder
// ELBOs and model marginals on small state spaces.
namespace maskdiff {

// Discretisation t(i) = i / T, s(i) = (i - 1) / T.
struct TimeGrid {
  std::size_t steps = 1;

  explicit TimeGrid(std::size_t T) : steps(T) {
    if (T < 1) throw PreconditionError("TimeGrid: T must be >= 1");
  }
  double t(std::size_t i) const { return i == steps ? 1.0 : static_cast<double>(i) / static_cast<double>(steps); }
  double s(std::size_t i) const { return t(i - 1); }
};

struct ExactBudget {
  std::size_t max_states = 4096;  // (V+1)^L
  std::size_t max_steps = 64;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Denoiser outputs for every state of the (V+1)^L space, computed once.
class PredictionTable {
 public:
  template <Denoiser D>
  explicit PredictionTable(const D& den, const ExactBudget& budget = {}) : space_(den.vocab(), den.length()) {
    if (space_.size() > budget.max_states)
      throw ResourceError("state space (V+1)^L = " + std::to_string(space_.size()) + " exceeds budget");
    preds_.reserve(space_.size());
    for (std::size_t i = 0; i < space_.size(); ++i) preds_.push_back(den.predict(space_.decode(i)));
  }

  const StateSpace& space() const noexcept { return space_; }
  int vocab() const noexcept { return space_.vocab(); }
  std::size_t length() const noexcept { return space_.length(); }
  const Prediction& at(std::size_t idx) const { return preds_[idx]; }
  const Prediction& operator[](const TokenSeq& z) const { return preds_[space_.encode(z)]; }

 private:
  StateSpace space_;
  std::vector<Prediction> preds_;
};

namespace detail {

template <class D>
decltype(auto) as_table(const D& den) {
  if constexpr (std::same_as<D, PredictionTable>)
    return (den);
  else
    return PredictionTable(den);
}

// Calls fn(z, q(z | x)) for every z_t reachable from x (each position either
// x_p or MASK) with nonzero probability.
template <class Fn>
void for_each_forward(const Schedule& schedule, double t, const TokenSeq& x, Fn&& fn) {
  const std::size_t L = x.size();
  const double a = schedule.alpha(t);
  const double m = schedule.mask_prob(t);
  for (std::size_t pattern = 0; pattern < (std::size_t{1} << L); ++pattern) {
    double prob = 1.0;
    TokenSeq z = x;
    for (std::size_t p = 0; p < L; ++p) {
      if (pattern >> p & 1) {
        z.set(p, kMask);
        prob *= m;
      } else {
        prob *= a;
      }
    }
    if (prob > 0.0) fn(z, prob);
  }
}

// Calls fn(state index of z_s, p_theta(z_s | z_t)) over the support of the
// factorised reverse kernel.
template <class Fn>
void for_each_reverse(const StateSpace& space, const TokenSeq& zt, const Prediction& mu, double stay, double reveal,
                      Fn&& fn) {
  const std::size_t L = zt.size();
  const int V = space.vocab();
  std::vector<int> choice(L, 0);  // per masked position: 0..V-1 = revealed token, V = stays MASK
  std::vector<std::size_t> masked;
  for (std::size_t p = 0; p < L; ++p)
    if (zt.is_masked(p)) masked.push_back(p);
  while (true) {
    double prob = 1.0;
    std::size_t idx = 0;
    std::size_t k = 0;
    for (std::size_t p = 0; p < L; ++p) {
      int digit;
      if (k < masked.size() && masked[k] == p) {
        digit = choice[k++];
        prob *= digit == V ? stay : reveal * mu(p, digit);
      } else {
        digit = zt[p];
      }
      idx = idx * (V + 1) + digit;
    }
    if (prob > 0.0) fn(idx, prob);
    std::size_t c = 0;
    while (c < masked.size() && ++choice[c] > V) choice[c++] = 0;
    if (c == masked.size()) break;
  }
}

// q(z | x) for a single z (zero if inconsistent).
inline double forward_prob(const Schedule& schedule, double t, const TokenSeq& z, const TokenSeq& x) {
  double prob = 1.0;
  const double a = schedule.alpha(t);
  const double m = schedule.mask_prob(t);
  for (std::size_t p = 0; p < x.size(); ++p) {
    if (z.is_masked(p)) prob *= m;
    else if (z[p] == x[p]) prob *= a;
    else return 0.0;
  }
  return prob;
}

inline std::size_t dataset_index(const EmpiricalDataset& data, const TokenSeq& x) {
  for (std::size_t k = 0; k < data.size(); ++k)
    if (data.sequence(k) == x) return k;
  return data.size();
}

}  // namespace detail

// q(x | z_t) over the dataset support, by Bayes rule.
inline std::vector<double> optimal_decoder(const EmpiricalDataset& data, const Schedule& schedule, double t,
                                           const TokenSeq& z) {
  std::vector<double> post(data.size());
  double evidence = 0.0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    post[k] = detail::forward_prob(schedule, t, z, data.sequence(k)) * data.prob(k);
    evidence += post[k];
  }
  if (!(evidence > 0.0)) throw ConditioningError("optimal_decoder: z has zero probability under the data");
  for (double& p : post) p /= evidence;
  return post;
}

// Tabular denoiser whose prediction at z is the per-position marginal of the
// optimal decoder q(x | z). For masked diffusion this does not depend on t.
// States the data cannot produce get uniform predictions.
inline TabularDenoiser optimal_denoiser(const EmpiricalDataset& data) {
  TabularDenoiser den(data.vocab(), data.length());
  const StateSpace& space = den.space();
  const Schedule linear = Schedule::linear();
  for (std::size_t iz = 0; iz < space.size(); ++iz) {
    const TokenSeq z = space.decode(iz);
    double evidence = 0.0;
    for (std::size_t k = 0; k < data.size(); ++k) evidence += detail::forward_prob(linear, 0.5, z, data.sequence(k));
    if (!(evidence > 0.0)) continue;
    const auto post = optimal_decoder(data, linear, 0.5, z);
    Prediction mu(data.length(), data.vocab());
    for (std::size_t k = 0; k < data.size(); ++k)
      for (std::size_t p = 0; p < data.length(); ++p) mu(p, data.sequence(k)[p]) += post[k];
    den.set_prediction(z, mu);
  }
  return den;
}

struct ElboBreakdown {
  double reconstruction = 0.0;   // E_q(z_0|x) log p(x | z_0)
  double prior_kl = 0.0;         // KL(q(z_1 | x) || p(z_1))
  std::vector<double> kl_terms;  // L_KL^(j), j = 1..T
  double total = 0.0;

  double kl_sum() const {
    double s = 0.0;
    for (double k : kl_terms) s += k;
    return s;
  }
};

// L_KL^(j)(x) = E_q(z_t(j)|x) KL(q(z_s(j) | z_t(j), x) || p_theta(z_s(j) | z_t(j))).
inline double kl_term(const TokenSeq& x, std::size_t j, const PredictionTable& table, const Schedule& schedule,
                      const TimeGrid& grid) {
  const double s = grid.s(j), t = grid.t(j);
  double acc = 0.0;
  detail::for_each_forward(schedule, t, x, [&](const TokenSeq& z, double q) {
    if (!z.has_mask()) return;
    acc += q * kl_term_closed_form(schedule, s, t, z, x, table[z]);
  });
  return acc;
}

// Prior p(z_1) is the point mass on all-MASK.
inline double prior_kl([[maybe_unused]] const TokenSeq& x, const Schedule& schedule) {
  return schedule.alpha(1.0) > 0.0 ? kInf : 0.0;
}

// Decoder at t(0): unmasked tokens are carried over, masked ones are scored
// with mu_theta(z_0).
inline double decoder_log_likelihood(const TokenSeq& x, const PredictionTable& table, const Schedule& schedule) {
  double acc = 0.0;
  detail::for_each_forward(schedule, 0.0, x, [&](const TokenSeq& z, double q) {
    const auto& mu = table[z];
    for (std::size_t p = 0; p < x.size(); ++p)
      if (z.is_masked(p)) acc += q * std::log(mu(p, x[p]));
  });
  return acc;
}

template <class D>
ElboBreakdown elbo_discrete(const TokenSeq& x, const D& den, const Schedule& schedule, const TimeGrid& grid) {
  const auto& table = detail::as_table(den);
  table.space().check(x);
  if (x.has_mask()) throw PreconditionError("elbo_discrete: x contains MASK");
  ElboBreakdown out;
  out.reconstruction = decoder_log_likelihood(x, table, schedule);
  out.prior_kl = prior_kl(x, schedule);
  out.kl_terms.resize(grid.steps);
  for (std::size_t j = 1; j <= grid.steps; ++j) out.kl_terms[j - 1] = kl_term(x, j, table, schedule, grid);
  out.total = out.reconstruction - out.prior_kl - out.kl_sum();
  return out;
}

// E_q(z_t|x) log q(x | z_t) with the optimal decoder.
inline double optimal_decoder_term(const TokenSeq& x, const EmpiricalDataset& data, const Schedule& schedule,
                                   double t) {
  const std::size_t k = detail::dataset_index(data, x);
  if (k == data.size()) return -kInf;
  double acc = 0.0;
  detail::for_each_forward(schedule, t, x, [&](const TokenSeq& z, double q) {
    acc += q * std::log(optimal_decoder(data, schedule, t, z)[k]);
  });
  return acc;
}

// Every per-x ingredient of the optimal-decoder ELBOs.
struct ExactTerms {
  std::vector<double> kl;       // L_KL^(j), j = 1..T
  std::vector<double> optimal;  // E log q(x | z_t(i)), i = 0..T
  double prior_kl = 0.0;
  double decoder = 0.0;
};

template <class D>
ExactTerms exact_terms(const TokenSeq& x, const D& den, const EmpiricalDataset& data, const Schedule& schedule,
                       const TimeGrid& grid) {
  const auto& table = detail::as_table(den);
  ExactTerms out;
  out.kl.resize(grid.steps);
  out.optimal.resize(grid.steps + 1);
  for (std::size_t j = 1; j <= grid.steps; ++j) out.kl[j - 1] = kl_term(x, j, table, schedule, grid);
  for (std::size_t i = 0; i <= grid.steps; ++i) out.optimal[i] = optimal_decoder_term(x, data, schedule, grid.t(i));
  out.prior_kl = prior_kl(x, schedule);
  out.decoder = decoder_log_likelihood(x, table, schedule);
  return out;
}

// ELBO of the model that runs the denoiser from t(T) down to t(i) and then
// decodes optimally: E log q(x | z_t(i)) - prior KL - sum_{j > i} L_KL^(j).
// `optimal_steps` = i ranges over 0..T; i = 0 coincides with elbo_discrete
// whenever alpha_0 = 1.
inline double improved_elbo(const ExactTerms& terms, std::size_t optimal_steps) {
  const std::size_t T = terms.kl.size();
  if (optimal_steps > T) throw PreconditionError("improved_elbo: index must lie in 0..T");
  double v = terms.optimal[optimal_steps] - terms.prior_kl;
  for (std::size_t j = optimal_steps + 1; j <= T; ++j) v -= terms.kl[j - 1];
  return v;
}

template <class D>
double improved_elbo(const TokenSeq& x, std::size_t optimal_steps, const D& den, const EmpiricalDataset& data,
                     const Schedule& schedule, const TimeGrid& grid) {
  if (optimal_steps > grid.steps) throw PreconditionError("improved_elbo: index must lie in 0..T");
  return improved_elbo(exact_terms(x, den, data, schedule, grid), optimal_steps);
}

// E_q(z_t) KL(q(z_s | z_t) || p_theta(z_s | z_t)) with s = t(i-1), t = t(i),
// where q(z_s | z_t) marginalises x under the data distribution. Built from
// the forward joint q(z_s, z_t) over the full state space.
inline double marginal_reverse_kl(std::size_t i, const PredictionTable& table, const EmpiricalDataset& data,
                                  const Schedule& schedule, const TimeGrid& grid) {
  const double s = grid.s(i), t = grid.t(i);
  const StateSpace& space = table.space();
  std::unordered_map<std::size_t, std::map<std::size_t, double>> joint;  // z_t -> (z_s -> q(z_s, z_t))
  const double keep = schedule.alpha(s) > 0.0 ? schedule.alpha(t) / schedule.alpha(s) : 0.0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    const TokenSeq& x = data.sequence(k);
    detail::for_each_forward(schedule, s, x, [&](const TokenSeq& zs, double qs) {
      const std::size_t is = space.encode(zs);
      // forward transition: each clean token of z_s survives with prob alpha_t / alpha_s
      std::vector<std::size_t> clean;
      for (std::size_t p = 0; p < zs.size(); ++p)
        if (!zs.is_masked(p)) clean.push_back(p);
      for (std::size_t pattern = 0; pattern < (std::size_t{1} << clean.size()); ++pattern) {
        double prob = data.prob(k) * qs;
        TokenSeq zt = zs;
        for (std::size_t c = 0; c < clean.size(); ++c) {
          if (pattern >> c & 1) {
            zt.set(clean[c], kMask);
            prob *= 1.0 - keep;
          } else {
            prob *= keep;
          }
        }
        if (prob > 0.0) joint[space.encode(zt)][is] += prob;
      }
    });
  }

  const double stay = schedule.mask_prob(s) / schedule.mask_prob(t);
  const double reveal = unmask_probability(schedule, s, t);
  double total = 0.0;
  // Deterministic order over z_t.
  std::vector<std::size_t> keys;
  for (const auto& [k, _] : joint) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  for (std::size_t it : keys) {
    const auto& row = joint[it];
    double qt = 0.0;
    for (const auto& [_, v] : row) qt += v;
    const TokenSeq zt = space.decode(it);
    const Prediction& mu = table.at(it);
    double kl = 0.0;
    for (const auto& [is, v] : row) {
      const TokenSeq zs = space.decode(is);
      double p = 1.0;
      for (std::size_t pos = 0; pos < zt.size(); ++pos) {
        if (!zt.is_masked(pos)) p *= zs[pos] == zt[pos] ? 1.0 : 0.0;
        else p *= zs.is_masked(pos) ? stay : reveal * mu(pos, zs[pos]);
      }
      const double cond = v / qt;
      kl += p > 0.0 ? cond * std::log(cond / p) : kInf;
    }
    total += qt * kl;
  }
  return total;
}

struct GapPair {
  double lhs = 0.0;  // E_q(x) [L^(i+1) - L^(i)]
  double rhs = 0.0;  // E_q(z_t(i)) KL(q(z_t(i-1) | z_t(i)) || p_theta(...))
};

// Both sides of the improved-bound identity for step i in 1..T.
template <class D>
GapPair theorem1_gap(std::size_t i, const D& den, const EmpiricalDataset& data, const Schedule& schedule,
                     const TimeGrid& grid) {
  if (i < 1 || i > grid.steps) throw PreconditionError("theorem1_gap: i must lie in 1..T");
  const auto& table = detail::as_table(den);
  GapPair g;
  for (std::size_t k = 0; k < data.size(); ++k) {
    const ExactTerms terms = exact_terms(data.sequence(k), table, data, schedule, grid);
    g.lhs += data.prob(k) * (improved_elbo(terms, i) - improved_elbo(terms, i - 1));
  }
  g.rhs = marginal_reverse_kl(i, table, data, schedule, grid);
  return g;
}

// sum_x q(x) | sum_i w_i L^(i)(x) - ( -sum_j W_j L_KL^(j)(x) + sum_i w_i c_i ) |
// with W_j = sum_{i <= j} w_i and c_i = E log q(x | z_t(i-1)) - prior KL.
template <class D>
double theorem2_residual(std::span<const double> w, const D& den, const EmpiricalDataset& data,
                         const Schedule& schedule, const TimeGrid& grid) {
  if (w.size() != grid.steps) throw ShapeError("theorem2_residual: need one weight per step");
  const auto& table = detail::as_table(den);
  const std::size_t T = grid.steps;
  double residual = 0.0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    const ExactTerms terms = exact_terms(data.sequence(k), table, data, schedule, grid);
    double lhs = 0.0;
    for (std::size_t i = 1; i <= T; ++i) {
      double bound = terms.optimal[i - 1] - terms.prior_kl;
      for (std::size_t j = i; j <= T; ++j) bound -= terms.kl[j - 1];
      lhs += w[i - 1] * bound;
    }
    double rhs = 0.0, cumulative = 0.0, c = 0.0;
    for (std::size_t j = 1; j <= T; ++j) {
      cumulative += w[j - 1];
      rhs -= cumulative * terms.kl[j - 1];
      c += w[j - 1] * (terms.optimal[j - 1] - terms.prior_kl);
    }
    residual += data.prob(k) * std::abs(lhs - (rhs + c));
  }
  return residual;
}

namespace detail {

inline void check_budget(const StateSpace& space, const TimeGrid& grid, const ExactBudget& budget) {
  if (space.size() > budget.max_states || grid.steps > budget.max_steps)
    throw ResourceError("exact marginalisation exceeds the state/step budget");
}

// Law of z_t(stop) under the denoiser chain started from all-MASK at t(T).
inline std::vector<double> chain_to(const PredictionTable& table, const Schedule& schedule, const TimeGrid& grid,
                                    std::size_t stop) {
  const StateSpace& space = table.space();
  std::vector<double> cur(space.size(), 0.0);
  cur[space.encode(TokenSeq::all_mask(space.length(), space.vocab()))] = 1.0;
  for (std::size_t i = grid.steps; i > stop; --i) {
    const double s = grid.s(i), t = grid.t(i);
    const double mt = schedule.mask_prob(t);
    const double stay = mt > 0.0 ? schedule.mask_prob(s) / mt : 0.0;
    const double reveal = mt > 0.0 ? unmask_probability(schedule, s, t) : 0.0;
    std::vector<double> next(space.size(), 0.0);
    for (std::size_t iz = 0; iz < space.size(); ++iz) {
      if (cur[iz] == 0.0) continue;
      const TokenSeq zt = space.decode(iz);
      if (zt.has_mask() && mt == 0.0) throw InconsistentStateError("MASK at a time where alpha_t = 1");
      for_each_reverse(space, zt, table.at(iz), stay, reveal,
                       [&](std::size_t is, double p) { next[is] += cur[iz] * p; });
    }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace detail

// Exact p_theta(x) over all V^L clean sequences (indexed by
// StateSpace::encode_clean): chain-marginalise the reverse model from
// all-MASK, then fill residual MASKs from mu_theta(z_0).
template <class D>
std::vector<double> exact_model_marginal(const D& den, const Schedule& schedule, const TimeGrid& grid,
                                         const ExactBudget& budget = {}) {
  const auto& table = detail::as_table(den);
  const StateSpace& space = table.space();
  detail::check_budget(space, grid, budget);
  const std::vector<double> z0 = detail::chain_to(table, schedule, grid, 0);
  std::vector<double> out(space.clean_size(), 0.0);
  for (std::size_t iz = 0; iz < space.size(); ++iz) {
    if (z0[iz] == 0.0) continue;
    const TokenSeq z = space.decode(iz);
    // decode = reverse kernel with everything revealed
    detail::for_each_reverse(space, z, table.at(iz), 0.0, 1.0, [&](std::size_t ix, double p) {
      out[space.encode_clean(space.decode(ix))] += z0[iz] * p;
    });
  }
  return out;
}

// Marginal of the hybrid model behind improved_elbo(., i): denoiser chain down
// to t(i), then the optimal decoder. States the data cannot produce have no
// optimal decoder and drop their mass, so the result may sum to less than 1.
template <class D>
std::vector<double> exact_hybrid_marginal(const D& den, const EmpiricalDataset& data, const Schedule& schedule,
                                          const TimeGrid& grid, std::size_t optimal_steps,
                                          const ExactBudget& budget = {}) {
  const auto& table = detail::as_table(den);
  const StateSpace& space = table.space();
  detail::check_budget(space, grid, budget);
  const std::vector<double> zi = detail::chain_to(table, schedule, grid, optimal_steps);
  const double t = grid.t(optimal_steps);
  std::vector<double> out(space.clean_size(), 0.0);
  for (std::size_t iz = 0; iz < space.size(); ++iz) {
    if (zi[iz] == 0.0) continue;
    const TokenSeq z = space.decode(iz);
    double evidence = 0.0;
    for (std::size_t k = 0; k < data.size(); ++k)
      evidence += detail::forward_prob(schedule, t, z, data.sequence(k)) * data.prob(k);
    if (!(evidence > 0.0)) continue;
    const auto post = optimal_decoder(data, schedule, t, z);
    for (std::size_t k = 0; k < data.size(); ++k) out[space.encode_clean(data.sequence(k))] += zi[iz] * post[k];
  }
  return out;
}

// KL(q || p) for q given on the dataset support and p over all clean sequences.
inline double data_kl(const EmpiricalDataset& data, const StateSpace& space, std::span<const double> model) {
  double kl = 0.0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    const double q = data.prob(k);
    if (q == 0.0) continue;
    const double p = model[space.encode_clean(data.sequence(k))];
    if (!(p > 0.0)) return kInf;
    kl += q * std::log(q / p);
  }
  return kl;
}

template <class D>
double exact_data_model_kl(const EmpiricalDataset& data, const D& den, const Schedule& schedule, const TimeGrid& grid,
                           const ExactBudget& budget = {}) {
  const auto& table = detail::as_table(den);
  return data_kl(data, table.space(), exact_model_marginal(table, schedule, grid, budget));
}

// E_q(x) of elbo_discrete total.
template <class D>
double exact_average_elbo(const EmpiricalDataset& data, const D& den, const Schedule& schedule, const TimeGrid& grid) {
  const auto& table = detail::as_table(den);
  double acc = 0.0;
  for (std::size_t k = 0; k < data.size(); ++k)
    acc += data.prob(k) * elbo_discrete(data.sequence(k), table, schedule, grid).total;
  return acc;
}

// w_tilde(t) * (-alpha'_t): the CE weight times the mask probability, which
// is what multiplies a single masked position's expected cross-entropy. Finite
// on [0,1) for every family; evaluated without dividing by 1 - alpha_t.
inline double masked_rate_weight(const WeightingSpec& spec, const Schedule& schedule, double t) {
  const double a = schedule.alpha(t);
  const double m = schedule.mask_prob(t);
  const double rate = -schedule.alpha_prime(t);
  switch (spec.family) {
    case Family::Elbo: return rate;
    case Family::Simple: return m;
    case Family::Fm: return rate * std::sqrt(m / a);
    case Family::Sigmoid: return rate * m / (m + std::exp(-spec.k) * a);
    case Family::Iddpm: return 2.0 * rate * std::sqrt(a * m);
    case Family::Edm: return detail::edm_w_hat(schedule.log_snr(t)) * rate;
  }
  return 0.0;
}

struct QuadratureResult {
  double value = 0.0;
  double error_estimate = 0.0;
  std::size_t levels = 0;
  bool diverged = false;
};

struct QuadratureOptions {
  std::size_t max_refinements = 15;  // tanh-sinh levels; each doubles the node count
  double tolerance = 1e-12;
};

namespace detail {

// Positive loss int_0^1 rate_weight(t) / (1 - alpha_t) E_q(z_t|x) [sum_{masked p} -log mu_p(z_t)[x_p]] dt,
// i.e. the negated continuous-time weighted objective. The inner expectation
// is exact: a polynomial in alpha_t over the 2^L mask patterns.
template <class D>
QuadratureResult continuous_quadrature(const TokenSeq& x, const D& den, const Schedule& schedule,
                                       const std::function<double(double)>& rate_weight,
                                       const QuadratureOptions& opt = {}) {
  const auto& table = detail::as_table(den);
  const std::size_t L = x.size();
  // cross-entropy per mask pattern, grouped with its mask count
  std::vector<std::pair<std::size_t, double>> patterns;
  detail::for_each_forward(Schedule::linear(), 0.5, x, [&](const TokenSeq& z, double) {
    const std::size_t k = z.mask_count();
    if (k == 0) return;
    const auto& mu = table[z];
    double ce = 0.0;
    for (std::size_t p = 0; p < L; ++p)
      if (z.is_masked(p)) ce -= std::log(mu(p, x[p]));
    patterns.emplace_back(k, ce);
  });

  auto integrand = [&](double t) {
    if (!(t > 0.0 && t < 1.0)) return 0.0;
    const double a = schedule.alpha(t);
    const double m = schedule.mask_prob(t);
    const double rw = rate_weight(t);
    double acc = 0.0;
    for (const auto& [k, ce] : patterns)
      acc += std::pow(a, static_cast<double>(L - k)) * std::pow(m, static_cast<double>(k - 1)) * ce;
    const double v = rw * acc;
    return std::isnan(v) ? 0.0 : v;
  };

  boost::math::quadrature::tanh_sinh<double> integrator(opt.max_refinements);
  QuadratureResult r;
  double l1 = 0.0;
  try {
    r.value = integrator.integrate(integrand, 0.0, 1.0, opt.tolerance, &r.error_estimate, &l1, &r.levels);
  } catch (const std::exception&) {
    r.value = kInf;
  }
  r.diverged = !std::isfinite(r.value) || r.error_estimate > 1e-6 * std::max(1.0, std::abs(r.value));
  return r;
}

}  // namespace detail

// Continuous-time weighted loss  int_0^1 w(t) (-alpha'_t) / (1 - alpha_t) E[masked CE] dt.
template <class D>
QuadratureResult continuous_elbo_quadrature(const TokenSeq& x, const D& den, const WeightingSpec& spec,
                                            const Schedule& schedule, const QuadratureOptions& opt = {}) {
  if (spec.side != Side::Masked) throw UnsupportedError("continuous_elbo_quadrature needs a masked spec");
  return detail::continuous_quadrature(
      x, den, schedule, [&](double t) { return masked_rate_weight(spec, schedule, t); }, opt);
}

// Same loss with a weighting fixed as a function of t, independent of the schedule.
template <class D>
QuadratureResult continuous_time_weighted_quadrature(const TokenSeq& x, const D& den,
                                                     const std::function<double(double)>& w_of_t,
                                                     const Schedule& schedule, const QuadratureOptions& opt = {}) {
  return detail::continuous_quadrature(
      x, den, schedule, [&](double t) { return w_of_t(t) * -schedule.alpha_prime(t); }, opt);
}

}  // namespace maskdiff
