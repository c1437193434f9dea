#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "maskdiff/errors.hpp"
#include "maskdiff/format.hpp"
#include "maskdiff/normal.hpp"
#include "maskdiff/schedules.hpp"

namespace maskdiff {

enum class Family { Elbo, Edm, Iddpm, Sigmoid, Fm, Simple };
enum class Side { Gaussian, Masked };

// One weighting function. `side` selects the continuous (Gaussian) or masked
// closed forms; `k` is the sigmoid shift.
struct WeightingSpec {
  Family family = Family::Elbo;
  double k = 0.0;
  Side side = Side::Masked;

  static WeightingSpec masked(Family f, double k = 0.0) { return {f, k, Side::Masked}; }
  static WeightingSpec gaussian(Family f, double k = 0.0) {
    if (f == Family::Simple) throw UnsupportedError("simple weighting is defined for masked diffusion only");
    return {f, k, Side::Gaussian};
  }
};

inline const char* to_string(Family f) {
  switch (f) {
    case Family::Elbo: return "elbo";
    case Family::Edm: return "edm";
    case Family::Iddpm: return "iddpm";
    case Family::Sigmoid: return "sigmoid";
    case Family::Fm: return "fm";
    case Family::Simple: return "simple";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  for (Family f : {Family::Elbo, Family::Edm, Family::Iddpm, Family::Sigmoid, Family::Fm, Family::Simple})
    if (s == to_string(f)) return f;
  throw PreconditionError("unknown weighting '" + s + "'");
}

inline std::string describe(const WeightingSpec& spec) {
  std::string out = to_string(spec.family);
  if (spec.family == Family::Sigmoid) out += "(k=" + format_double(spec.k) + ")";
  return out;
}

// Log-SNR used by the Gaussian-side closed forms of a family.
inline GaussianLogSnr gaussian_log_snr_for(Family f) {
  switch (f) {
    case Family::Edm: return GaussianLogSnr::Edm;
    case Family::Fm: return GaussianLogSnr::Fm;
    default: return GaussianLogSnr::Iddpm;
  }
}

namespace detail {

inline void check_spec(const WeightingSpec& spec) {
  if (spec.side == Side::Gaussian && spec.family == Family::Simple)
    throw UnsupportedError("simple weighting is defined for masked diffusion only");
}

// p_N(2.4, 2.4^2)(lambda) (e^-lambda + 0.5^2) / 0.5^2, assembled in log space.
inline double edm_w_hat(double lambda) {
  if (std::isinf(lambda)) return 0.0;
  const double log_ratio = lambda < 0.0 ? -lambda + std::log1p(0.25 * std::exp(lambda)) - std::log(0.25)
                                        : std::log1p(4.0 * std::exp(-lambda));
  return std::exp(kEdmPrior.log_pdf(lambda) + log_ratio);
}

}  // namespace detail

// Weighting as a function of log-SNR.
inline double w_hat(const WeightingSpec& spec, double lambda) {
  detail::check_spec(spec);
  if (std::isnan(lambda)) throw DomainError("w_hat: lambda is NaN");
  switch (spec.family) {
    case Family::Elbo: return 1.0;
    case Family::Edm: return detail::edm_w_hat(lambda);
    case Family::Iddpm: return 1.0 / std::cosh(0.5 * lambda);
    case Family::Sigmoid: return 1.0 / (1.0 + std::exp(lambda - spec.k));
    case Family::Fm: return std::exp(-0.5 * lambda);
    case Family::Simple: throw UnsupportedError("simple weighting has no log-SNR form");
  }
  return 0.0;
}

// Weighting as a function of time. Divergent endpoints come back as +inf.
inline double w_tilde(const WeightingSpec& spec, const Schedule& schedule, double t) {
  detail::check_spec(spec);
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("w_tilde: t must lie in [0,1]");
  if (spec.family == Family::Elbo) return 1.0;

  if (spec.side == Side::Gaussian) {
    const double sn = std::sin(0.5 * std::numbers::pi * t);
    const double cs = std::sin(0.5 * std::numbers::pi * (1.0 - t));
    switch (spec.family) {
      case Family::Edm:
        if (t == 0.0 || t == 1.0) return 0.0;
        return detail::edm_w_hat(gaussian_log_snr(GaussianLogSnr::Edm, t));
      case Family::Iddpm: return 2.0 * sn * cs;
      // 1 / (1 + e^-k tan^-2), multiplied through by sin^2
      case Family::Sigmoid: return sn * sn / (sn * sn + std::exp(-spec.k) * cs * cs);
      case Family::Fm: return t / (1.0 - t);
      default: break;
    }
    return 1.0;
  }

  const double a = schedule.alpha(t);
  const double m = schedule.mask_prob(t);
  switch (spec.family) {
    case Family::Edm: return detail::edm_w_hat(schedule.log_snr(t));
    case Family::Iddpm: return 2.0 * std::sqrt(a * m);
    case Family::Sigmoid: return m / (m + std::exp(-spec.k) * a);
    case Family::Fm: return std::sqrt(m / a);
    case Family::Simple:
      if (m == 0.0) return 0.0;
      return -m / schedule.alpha_prime(t);
    default: break;
  }
  return 1.0;
}

// Total cross-entropy weight w_tilde(t) (-alpha'_t) / (1 - alpha_t) of the masked
// objective, using the algebraically cancelled form of each family so that
// no inf * 0 products occur.
inline double ce_weight(const WeightingSpec& spec, const Schedule& schedule, double t) {
  if (spec.side != Side::Masked) throw UnsupportedError("ce_weight is defined for the masked side");
  if (!(t > 0.0 && t < 1.0)) throw DomainError("ce_weight: t must lie in (0,1)");
  const double a = schedule.alpha(t);
  const double m = schedule.mask_prob(t);
  const double rate = -schedule.alpha_prime(t);
  switch (spec.family) {
    case Family::Elbo: return rate / m;
    case Family::Edm: return detail::edm_w_hat(schedule.log_snr(t)) * rate / m;
    case Family::Iddpm: return 2.0 * rate * std::sqrt(a / m);
    case Family::Sigmoid: return rate / (m + std::exp(-spec.k) * a);
    case Family::Fm: return rate / std::sqrt(a * m);
    case Family::Simple: return 1.0;
  }
  return 0.0;
}

// Gaussian analogue of ce_weight: the coefficient w_tilde(t) (-lambda'(t)) on the
// per-time squared epsilon error (before the 1/2).
inline double gaussian_loss_weight(const WeightingSpec& spec, double t) {
  if (spec.side != Side::Gaussian) throw UnsupportedError("gaussian_loss_weight needs a Gaussian spec");
  return w_tilde(spec, Schedule::linear(), t) * -gaussian_log_snr_derivative(gaussian_log_snr_for(spec.family), t);
}

inline std::vector<double> uniform_grid(std::size_t n, double lo, double hi) {
  if (n < 2) throw PreconditionError("uniform_grid: need at least two points");
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = i + 1 == n ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

// 4096 points on [1e-4, 1 - 1e-3].
inline std::vector<double> default_monotone_grid() { return uniform_grid(4096, 1e-4, 1.0 - 1e-3); }

struct MonotoneReport {
  bool monotone = true;
  std::optional<std::pair<double, double>> first_violation;
};

inline void check_open_grid(const std::vector<double>& grid) {
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0 && grid[i] < 1.0)) throw PreconditionError("grid must lie in (0,1)");
    if (i && !(grid[i] > grid[i - 1])) throw PreconditionError("grid must be strictly increasing");
  }
}

// Grid certification that w_tilde is non-decreasing. A relative slack of
// 1e-12 absorbs rounding on constant stretches.
inline MonotoneReport check_monotone(const WeightingSpec& spec, const Schedule& schedule,
                                     const std::vector<double>& grid) {
  check_open_grid(grid);
  MonotoneReport r;
  double prev = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double w = w_tilde(spec, schedule, grid[i]);
    if (i && w < prev - 1e-12 * std::abs(prev)) {
      r.monotone = false;
      r.first_violation = std::make_pair(grid[i - 1], grid[i]);
      return r;
    }
    prev = w;
  }
  return r;
}

// Weights w_i whose prefix sums reproduce w_tilde(i / T).
inline std::vector<double> implied_increments(const WeightingSpec& spec, const Schedule& schedule, std::size_t T) {
  if (T < 1) throw PreconditionError("implied_increments: T must be >= 1");
  std::vector<double> w(T);
  double prev = 0.0;
  for (std::size_t i = 1; i <= T; ++i) {
    const double cur = w_tilde(spec, schedule, static_cast<double>(i) / static_cast<double>(T));
    w[i - 1] = i == 1 ? cur : cur - prev;
    prev = cur;
  }
  return w;
}

struct CurveRow {
  double t;
  double w_tilde;
  double w_hat_of_lambda;
  double ce_weight;
};

struct CurveTable {
  WeightingSpec spec;
  std::string schedule;
  std::string grid;
  bool normalized = false;
  std::vector<CurveRow> rows;
};

// Tabulates a weighting on `grid`. For the masked side the last column is the
// CE weight; for the Gaussian side it is gaussian_loss_weight. Simple has no
// log-SNR form, so its w_hat column repeats w_tilde (the same function
// re-indexed by lambda). With `normalize`, each column is divided by its
// maximum over the grid.
inline CurveTable emit_curves(const WeightingSpec& spec, const Schedule& schedule, const std::vector<double>& grid,
                              bool normalize) {
  check_open_grid(grid);
  if (normalize && !grid.empty() && grid.back() > 0.999 + 1e-15)
    throw PreconditionError("normalized curves are clipped to [0, 0.999]");
  CurveTable table{spec, spec.side == Side::Masked ? schedule.name() : to_string(gaussian_log_snr_for(spec.family)),
                   std::to_string(grid.size()) + " points on [" + format_double(grid.empty() ? 0.0 : grid.front()) +
                       ", " + format_double(grid.empty() ? 0.0 : grid.back()) + "]",
                   normalize,
                   {}};
  table.rows.reserve(grid.size());
  for (double t : grid) {
    CurveRow row{t, w_tilde(spec, schedule, t), 0.0, 0.0};
    if (spec.family == Family::Simple) {
      row.w_hat_of_lambda = row.w_tilde;
    } else {
      const double lambda = spec.side == Side::Masked ? schedule.log_snr(t)
                                                      : gaussian_log_snr(gaussian_log_snr_for(spec.family), t);
      row.w_hat_of_lambda = w_hat(spec, lambda);
    }
    row.ce_weight = spec.side == Side::Masked ? ce_weight(spec, schedule, t) : gaussian_loss_weight(spec, t);
    table.rows.push_back(row);
  }
  if (normalize) {
    auto scale = [&](double CurveRow::*col) {
      double mx = 0.0;
      for (const auto& r : table.rows) mx = std::max(mx, r.*col);
      if (mx > 0.0 && std::isfinite(mx))
        for (auto& r : table.rows) r.*col /= mx;
    };
    scale(&CurveRow::w_tilde);
    scale(&CurveRow::w_hat_of_lambda);
    scale(&CurveRow::ce_weight);
  }
  return table;
}

inline void write_csv(std::ostream& os, const CurveTable& table) {
  os << "t,w_tilde,w_hat_of_lambda,ce_weight\n";
  for (const auto& r : table.rows)
    os << format_double(r.t) << ',' << format_double(r.w_tilde) << ',' << format_double(r.w_hat_of_lambda) << ','
       << format_double(r.ce_weight) << '\n';
}

}  // namespace maskdiff
