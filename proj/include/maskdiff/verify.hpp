#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"
#include "maskdiff/dataset.hpp"
#include "maskdiff/denoiser.hpp"
#include "maskdiff/exact_engine.hpp"
#include "maskdiff/format.hpp"
#include "maskdiff/gaussian_forms.hpp"
#include "maskdiff/masked_process.hpp"
#include "maskdiff/rng.hpp"
#include "maskdiff/schedules.hpp"
#include "maskdiff/weightings.hpp"

// Self-checks of the library against independent oracles. Each suite draws
// from its own substream of the seed.
namespace maskdiff::verify {

struct Check {
  std::string name;
  double value = 0.0;      // measured error (or statistic)
  double tolerance = 0.0;  // pass iff value <= tolerance
  bool passed = false;
};

struct SuiteReport {
  std::string suite;
  std::vector<Check> checks;

  std::size_t pass_count() const {
    return static_cast<std::size_t>(std::count_if(checks.begin(), checks.end(), [](const Check& c) { return c.passed; }));
  }
  bool passed() const { return pass_count() == checks.size(); }
  void add(std::string name, double value, double tolerance) {
    checks.push_back({std::move(name), value, tolerance, value <= tolerance});
  }
  void add_flag(std::string name, bool ok) { checks.push_back({std::move(name), ok ? 0.0 : 1.0, 0.0, ok}); }
};

struct Options {
  std::uint64_t seed = 0;
  std::size_t trials = 100;
  int vocab = 2;
  std::size_t length = 2;
  std::size_t steps = 8;
  std::size_t dataset_size = 2;
};

// Tabular denoiser with logits uniform in [-scale, scale].
inline TabularDenoiser random_tabular(int V, std::size_t L, Rng& rng, double scale = 2.0) {
  TabularDenoiser den(V, L);
  for (double& p : den.params()) p = rng.uniform(-scale, scale);
  return den;
}

// `n` distinct clean sequences with Dirichlet(1)-like random weights.
inline EmpiricalDataset random_dataset(int V, std::size_t L, std::size_t n, Rng& rng) {
  const StateSpace space(V, L);
  if (n > space.clean_size()) throw PreconditionError("random_dataset: more sequences than V^L");
  std::vector<std::size_t> picks;
  while (picks.size() < n) {
    const std::size_t c = rng.below(space.clean_size());
    if (std::find(picks.begin(), picks.end(), c) == picks.end()) picks.push_back(c);
  }
  std::vector<TokenSeq> seqs;
  std::vector<double> w;
  double total = 0.0;
  for (std::size_t c : picks) {
    seqs.push_back(space.decode_clean(c));
    w.push_back(-std::log(rng.uniform()));
    total += w.back();
  }
  for (double& v : w) v /= total;
  // force an exact unit sum
  double rest = 1.0;
  for (std::size_t i = 0; i + 1 < w.size(); ++i) rest -= w[i];
  w.back() = rest;
  return EmpiricalDataset(std::move(seqs), std::move(w));
}

inline SuiteReport schedules_suite(const Options&) {
  SuiteReport r{"schedules", {}};
  const auto reg = ScheduleRegistry::with_defaults();
  for (const char* name : {"cosine", "linear", "custom:quadratic"})
    r.add_flag(std::string("validate ") + name, validate(reg.get(name), 1001).passed());
  const Schedule cos = Schedule::cosine();
  r.add("cosine alpha(0.5) = 1 - sqrt(2)/2", std::abs(cos.alpha(0.5) - (1.0 - std::sqrt(0.5))), 1e-15);

  // Time form against the log-SNR form composed with lambda(t).
  double worst_masked = 0.0, worst_gauss = 0.0;
  const auto grid = uniform_grid(99, 0.01, 0.99);
  for (Family f : {Family::Elbo, Family::Iddpm, Family::Sigmoid, Family::Fm}) {
    const WeightingSpec m = WeightingSpec::masked(f), g = WeightingSpec::gaussian(f);
    for (double t : grid) {
      const double wm = w_tilde(m, cos, t);
      worst_masked = std::max(worst_masked, std::abs(wm - w_hat(m, cos.log_snr(t))) / std::max(1.0, wm));
      const double wg = w_tilde(g, cos, t);
      const double lg = gaussian_log_snr(gaussian_log_snr_for(f), t);
      worst_gauss = std::max(worst_gauss, std::abs(wg - w_hat(g, lg)) / std::max(1.0, wg));
    }
  }
  r.add("masked w_tilde vs w_hat(lambda)", worst_masked, 1e-9);
  r.add("gaussian w_tilde vs w_hat(lambda)", worst_gauss, 1e-9);

  double simple = 0.0;
  for (const char* name : {"cosine", "linear", "custom:quadratic"})
    for (double t : uniform_grid(999, 0.001, 0.999))
      simple = std::max(simple, std::abs(ce_weight(WeightingSpec::masked(Family::Simple), reg.get(name), t) - 1.0));
  r.add("simple CE weight == 1", simple, 1e-12);

  const auto mono = [&](WeightingSpec s) { return check_monotone(s, cos, default_monotone_grid()).monotone; };
  r.add_flag("monotone sigmoid(0)", mono(WeightingSpec::masked(Family::Sigmoid, 0.0)));
  r.add_flag("monotone fm", mono(WeightingSpec::masked(Family::Fm)));
  r.add_flag("monotone simple", mono(WeightingSpec::masked(Family::Simple)));
  r.add_flag("non-monotone iddpm", !mono(WeightingSpec::masked(Family::Iddpm)));
  return r;
}

// Kernel error maxima over a 16-point time grid: posterior vs Bayes oracle
// and Chapman-Kolmogorov composition of transitions.
struct KernelErrors {
  double posterior = 0.0;
  double chapman_kolmogorov = 0.0;
  double normalisation = 0.0;
};

inline KernelErrors kernel_errors(const Schedule& schedule, int V) {
  KernelErrors e;
  const auto grid = uniform_grid(16, 0.0, 1.0);
  for (std::size_t a = 0; a < grid.size(); ++a) {
    for (std::size_t b = a + 1; b < grid.size(); ++b) {
      const double s = grid[a], t = grid[b];
      for (Token x = 0; x < V; ++x) {
        for (Token z : {x, kMask}) {
          if (z == x && schedule.alpha(t) == 0.0) continue;
          if (z == kMask && schedule.mask_prob(t) == 0.0) continue;
          const TokenDist p = posterior(schedule, s, t, z, x, V);
          const TokenDist o = bayes_posterior_oracle(schedule, s, t, z, x, V);
          for (std::size_t k = 0; k < p.values().size(); ++k)
            e.posterior = std::max(e.posterior, std::abs(p.values()[k] - o.values()[k]));
          e.normalisation = std::max(e.normalisation, std::abs(p.sum() - 1.0));
        }
      }
      for (std::size_t c = b + 1; c < grid.size(); ++c) {
        const double u = grid[c];
        if (schedule.alpha(t) == 0.0) continue;
        for (Token x = 0; x < V; ++x) {
          if (schedule.alpha(s) == 0.0) continue;
          const TokenDist direct = transition(schedule, s, u, x, V);
          const TokenDist first = transition(schedule, s, t, x, V);
          TokenDist composed(V);
          for (Token mid : {x, kMask}) {
            const TokenDist second = transition(schedule, t, u, mid, V);
            for (Token y : {x, kMask}) composed[y] += first[mid] * second[y];
          }
          for (Token y : {x, kMask})
            e.chapman_kolmogorov = std::max(e.chapman_kolmogorov, std::abs(composed[y] - direct[y]));
        }
      }
    }
  }
  return e;
}

inline SuiteReport kernels_suite(const Options& opt) {
  SuiteReport r{"kernels", {}};
  const auto reg = ScheduleRegistry::with_defaults();
  for (const char* name : {"cosine", "linear", "custom:quadratic"}) {
    const KernelErrors e = kernel_errors(reg.get(name), std::max(opt.vocab, 2));
    r.add(std::string("posterior vs Bayes oracle, ") + name, e.posterior, 1e-12);
    r.add(std::string("Chapman-Kolmogorov, ") + name, e.chapman_kolmogorov, 1e-12);
    r.add(std::string("posterior normalisation, ") + name, e.normalisation, 1e-12);
  }
  return r;
}

struct Theorem1Stats {
  double max_abs_diff = 0.0;  // |lhs - rhs|
  double min_gap = kInf;      // smallest lhs
  bool bounds_tighten = true;
  double max_elbo_excess = -kInf;  // max over x of elbo_discrete - log p(x)
};

inline Theorem1Stats theorem1_stats(const Options& opt) {
  Theorem1Stats st;
  const Rng root(opt.seed, 0x746831);
  const Schedule schedule = Schedule::cosine();
  const TimeGrid grid(opt.steps);
  for (std::size_t trial = 0; trial < opt.trials; ++trial) {
    Rng rng = root.split(trial);
    const EmpiricalDataset data = random_dataset(opt.vocab, opt.length, opt.dataset_size, rng);
    const PredictionTable table(random_tabular(opt.vocab, opt.length, rng));
    std::vector<double> bound(opt.steps + 1, 0.0);  // E_q L^(i)
    std::vector<ExactTerms> terms;
    for (std::size_t k = 0; k < data.size(); ++k)
      terms.push_back(exact_terms(data.sequence(k), table, data, schedule, grid));
    for (std::size_t i = 0; i <= opt.steps; ++i)
      for (std::size_t k = 0; k < data.size(); ++k) bound[i] += data.prob(k) * improved_elbo(terms[k], i);
    for (std::size_t i = 1; i <= opt.steps; ++i) {
      const double lhs = bound[i] - bound[i - 1];
      const double rhs = marginal_reverse_kl(i, table, data, schedule, grid);
      st.max_abs_diff = std::max(st.max_abs_diff, std::abs(lhs - rhs));
      st.min_gap = std::min(st.min_gap, lhs);
      if (-bound[i] > -bound[i - 1] + 1e-12) st.bounds_tighten = false;
    }
    const auto px = exact_model_marginal(table, schedule, grid);
    const StateSpace& space = table.space();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const TokenSeq& x = data.sequence(k);
      const double lp = std::log(px[space.encode_clean(x)]);
      st.max_elbo_excess = std::max(st.max_elbo_excess, elbo_discrete(x, table, schedule, grid).total - lp);
    }
  }
  return st;
}

inline SuiteReport theorem1_suite(const Options& opt) {
  SuiteReport r{"theorem1", {}};
  const Theorem1Stats st = theorem1_stats(opt);
  r.add("max |E[L(i) - L(i-1)] - E[KL gap]|", st.max_abs_diff, 1e-9);
  r.add("min gap (negated)", -st.min_gap, 1e-12);
  r.add_flag("bounds nonincreasing in i", st.bounds_tighten);
  r.add("max elbo - log p(x)", st.max_elbo_excess, 1e-12);
  return r;
}

inline double theorem2_max_residual(const Options& opt, std::size_t weight_vectors) {
  const Rng root(opt.seed, 0x746832);
  const Schedule schedule = Schedule::cosine();
  const TimeGrid grid(opt.steps);
  double worst = 0.0;
  for (std::size_t trial = 0; trial < weight_vectors; ++trial) {
    Rng rng = root.split(trial);
    const EmpiricalDataset data = random_dataset(opt.vocab, opt.length, opt.dataset_size, rng);
    const PredictionTable table(random_tabular(opt.vocab, opt.length, rng));
    std::vector<double> w(opt.steps);
    for (double& v : w) v = rng.uniform(-2.0, 2.0);
    worst = std::max(worst, theorem2_residual(w, table, data, schedule, grid));
  }
  return worst;
}

inline SuiteReport theorem2_suite(const Options& opt) {
  SuiteReport r{"theorem2", {}};
  r.add("max weighted-sum residual", theorem2_max_residual(opt, std::max<std::size_t>(opt.trials / 2, 1)), 1e-9);
  return r;
}

struct GaussianErrors {
  double kl_vs_generic = 0.0;
  double posterior_vs_conditioning = 0.0;
  double ddpm_simple = 0.0;
};

// Random scalar instances against joint-Gaussian conditioning and the
// same-variance Gaussian KL.
inline GaussianErrors gaussian_errors(std::uint64_t seed, std::size_t instances) {
  GaussianErrors e;
  const Rng root(seed, 0x6761);
  for (std::size_t n = 0; n < instances; ++n) {
    Rng rng = root.split(n);
    const SnrCurve curve{static_cast<GaussianLogSnr>(n % 3)};
    double s = rng.uniform(0.02, 0.98), t = rng.uniform(0.02, 0.98);
    if (s > t) std::swap(s, t);
    if (t - s < 1e-3) t = std::min(0.99, s + 1e-3);
    const double x = rng.uniform(-2.0, 2.0), mu = rng.uniform(-2.0, 2.0);
    const GaussianMarginal ms = vp_marginal(curve, s), mt = vp_marginal(curve, t);
    const GaussianPosteriorParams pp = posterior_params(curve, s, t);

    // z_s = a_s x + sigma_s e1, z_t = (a_t/a_s) z_s + sigma_{t|s} e2
    const double cov = (mt.alpha / ms.alpha) * ms.sigma * ms.sigma;
    const double var_t = mt.sigma * mt.sigma;
    const double z_coef = cov / var_t;
    const double x_coef = ms.alpha - z_coef * mt.alpha;
    const double var = ms.sigma * ms.sigma - cov * cov / var_t;
    const double scale = std::max({1.0, std::abs(x_coef), std::abs(z_coef)});
    e.posterior_vs_conditioning = std::max(
        {e.posterior_vs_conditioning, std::abs(pp.x_coef - x_coef) / scale, std::abs(pp.z_coef - z_coef) / scale,
         std::abs(pp.variance - var) / std::max(1.0, var)});

    const double d = pp.x_coef * (x - mu);
    const double generic = d * d / (2.0 * pp.variance);
    const double eq6 = gaussian_kl_term(curve, s, t, std::span<const double>(&x, 1), std::span<const double>(&mu, 1));
    e.kl_vs_generic = std::max(e.kl_vs_generic, std::abs(eq6 - generic) / std::max(1.0, generic));

    const double eps = rng.uniform(0.0, 4.0);
    const double v = weighted_integrand(ddpm_simple_weight(curve.name, t), curve.name, t, eps);
    e.ddpm_simple = std::max(e.ddpm_simple, std::abs(v - 0.5 * eps));
  }
  return e;
}

inline SuiteReport gaussian_suite(const Options& opt) {
  SuiteReport r{"gaussian", {}};
  const GaussianErrors e = gaussian_errors(opt.seed, 1000);
  r.add("KL term vs generic Gaussian KL", e.kl_vs_generic, 1e-10);
  r.add("posterior vs joint conditioning", e.posterior_vs_conditioning, 1e-10);
  r.add("DDPM simple integrand vs eps^2/2", e.ddpm_simple, 1e-15);
  return r;
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"schedules", "kernels", "theorem1", "theorem2", "gaussian"};
  return names;
}

inline SuiteReport run_suite(const std::string& name, const Options& opt) {
  if (name == "schedules") return schedules_suite(opt);
  if (name == "kernels") return kernels_suite(opt);
  if (name == "theorem1") return theorem1_suite(opt);
  if (name == "theorem2") return theorem2_suite(opt);
  if (name == "gaussian") return gaussian_suite(opt);
  throw PreconditionError("unknown suite '" + name + "'");
}

inline nlohmann::ordered_json to_json(const SuiteReport& r) {
  nlohmann::ordered_json j;
  j["suite"] = r.suite;
  j["passed"] = r.pass_count();
  j["total"] = r.checks.size();
  j["checks"] = nlohmann::ordered_json::array();
  for (const auto& c : r.checks)
    j["checks"].push_back({{"name", c.name}, {"value", format_double(c.value)},
                           {"tolerance", format_double(c.tolerance)}, {"passed", c.passed}});
  return j;
}

}  // namespace maskdiff::verify
