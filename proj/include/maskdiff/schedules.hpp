#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "maskdiff/errors.hpp"
#include "maskdiff/normal.hpp"

namespace maskdiff {

enum class ScheduleKind { Cosine, Linear, Custom };

// Masking schedule alpha_t: probability that a token is still unmasked at
// time t. Built-ins are evaluated in closed form; custom schedules carry a
// user-supplied analytic derivative.
class Schedule {
 public:
  using Fn = std::function<double(double)>;

  // alpha_t = 1 - cos(pi/2 (1 - t))
  static Schedule cosine() { return Schedule(ScheduleKind::Cosine, "cosine", {}, {}); }
  // alpha_t = 1 - t
  static Schedule linear() { return Schedule(ScheduleKind::Linear, "linear", {}, {}); }
  static Schedule custom(std::string name, Fn alpha, Fn alpha_prime) {
    if (!alpha || !alpha_prime) throw PreconditionError("custom schedule needs alpha and alpha'");
    return Schedule(ScheduleKind::Custom, std::move(name), std::move(alpha), std::move(alpha_prime));
  }

  ScheduleKind kind() const noexcept { return kind_; }
  const std::string& name() const noexcept { return name_; }

  double alpha(double t) const {
    check_time(t);
    switch (kind_) {
      case ScheduleKind::Cosine:
        // Two algebraically equal forms; each is cancellation-free on its half.
        if (t < 0.5) return 1.0 - std::sin(0.5 * std::numbers::pi * t);
        {
          const double s = std::sin(0.25 * std::numbers::pi * (1.0 - t));
          return 2.0 * s * s;
        }
      case ScheduleKind::Linear:
        return 1.0 - t;
      case ScheduleKind::Custom:
        return alpha_(t);
    }
    return 0.0;
  }

  double alpha_prime(double t) const {
    check_time(t);
    switch (kind_) {
      case ScheduleKind::Cosine:
        return -0.5 * std::numbers::pi * std::sin(0.5 * std::numbers::pi * (1.0 - t));
      case ScheduleKind::Linear:
        return -1.0;
      case ScheduleKind::Custom:
        return alpha_prime_(t);
    }
    return 0.0;
  }

  // 1 - alpha_t, accurate near t = 0 for built-ins.
  double mask_prob(double t) const {
    check_time(t);
    switch (kind_) {
      case ScheduleKind::Cosine:
        if (t < 0.5) return std::sin(0.5 * std::numbers::pi * t);
        return 1.0 - alpha(t);
      case ScheduleKind::Linear:
        return t;
      case ScheduleKind::Custom:
        return 1.0 - alpha_(t);
    }
    return 1.0;
  }

  // Masked-diffusion log-SNR log(alpha / (1 - alpha)); +inf at alpha = 1 and
  // -inf at alpha = 0.
  double log_snr(double t) const { return std::log(alpha(t)) - std::log(mask_prob(t)); }

 private:
  Schedule(ScheduleKind kind, std::string name, Fn alpha, Fn alpha_prime)
      : kind_(kind), name_(std::move(name)), alpha_(std::move(alpha)), alpha_prime_(std::move(alpha_prime)) {}

  static void check_time(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("schedule: t must lie in [0,1]");
  }

  ScheduleKind kind_;
  std::string name_;
  Fn alpha_;
  Fn alpha_prime_;
};

inline double log_snr_masked(const Schedule& schedule, double t) { return schedule.log_snr(t); }

struct ValidationReport {
  double alpha_at_0 = 0.0;
  double alpha_at_1 = 0.0;
  bool endpoints_ok = false;
  bool monotone_ok = false;
  std::optional<std::pair<double, double>> first_violation;  // (t_a, t_b) with alpha(t_a) <= alpha(t_b)
  bool derivative_sign_ok = false;
  double max_derivative_rel_error = 0.0;
  bool derivative_ok = false;

  bool passed() const { return endpoints_ok && monotone_ok && derivative_sign_ok && derivative_ok; }
};

// Grid-based certification of a schedule: endpoint values, strict decrease,
// non-positive derivative and analytic-vs-central-difference agreement.
// Failures are reported, never thrown.
inline ValidationReport validate(const Schedule& schedule, std::size_t grid_size) {
  if (grid_size < 3) throw PreconditionError("validate: grid_size must be >= 3");
  constexpr double kEndpointTol = 1e-12;
  constexpr double kFdStep = 1e-6;
  constexpr double kFdTol = 1e-6;

  ValidationReport r;
  r.alpha_at_0 = schedule.alpha(0.0);
  r.alpha_at_1 = schedule.alpha(1.0);
  r.endpoints_ok = std::abs(r.alpha_at_0 - 1.0) <= kEndpointTol && std::abs(r.alpha_at_1) <= kEndpointTol;

  const double h = 1.0 / static_cast<double>(grid_size - 1);
  r.monotone_ok = true;
  r.derivative_sign_ok = true;
  double prev = r.alpha_at_0;
  for (std::size_t k = 1; k < grid_size; ++k) {
    const double t = k == grid_size - 1 ? 1.0 : static_cast<double>(k) * h;
    const double a = schedule.alpha(t);
    if (!(a < prev) && r.monotone_ok) {
      r.monotone_ok = false;
      r.first_violation = std::make_pair(static_cast<double>(k - 1) * h, t);
    }
    prev = a;
  }
  for (std::size_t k = 0; k < grid_size; ++k) {
    const double t = k == grid_size - 1 ? 1.0 : static_cast<double>(k) * h;
    const double d = schedule.alpha_prime(t);
    if (!(d <= 0.0)) r.derivative_sign_ok = false;
    if (k == 0 || k == grid_size - 1 || t - kFdStep < 0.0 || t + kFdStep > 1.0) continue;
    const double fd = (schedule.alpha(t + kFdStep) - schedule.alpha(t - kFdStep)) / (2.0 * kFdStep);
    const double rel = std::abs(d - fd) / std::max(1e-12, std::abs(d));
    r.max_derivative_rel_error = std::max(r.max_derivative_rel_error, rel);
  }
  r.derivative_ok = r.max_derivative_rel_error <= kFdTol;
  return r;
}

// Named schedule lookup: "cosine", "linear", "custom:<name>".
class ScheduleRegistry {
 public:
  ScheduleRegistry() = default;

  // Registry with the built-ins plus the stock custom schedules.
  static ScheduleRegistry with_defaults() {
    ScheduleRegistry reg;
    reg.add(Schedule::custom(
        "quadratic", [](double t) { return 1.0 - t * t; }, [](double t) { return -2.0 * t; }));
    return reg;
  }

  void add(Schedule schedule) {
    if (schedule.kind() != ScheduleKind::Custom)
      throw PreconditionError("only custom schedules are registered");
    const std::string key = schedule.name();
    custom_.insert_or_assign(key, std::move(schedule));
  }

  Schedule get(const std::string& spec) const {
    if (spec == "cosine") return Schedule::cosine();
    if (spec == "linear") return Schedule::linear();
    constexpr std::string_view kPrefix = "custom:";
    if (spec.rfind(kPrefix, 0) == 0) {
      auto it = custom_.find(spec.substr(kPrefix.size()));
      if (it != custom_.end()) return it->second;
    }
    throw PreconditionError("unknown schedule '" + spec + "'");
  }

 private:
  std::map<std::string, Schedule> custom_;
};

// Gaussian-diffusion log-SNR parameterisations. Sigmoid weighting shares the
// IDDPM (cosine) log-SNR.
enum class GaussianLogSnr { Edm, Iddpm, Fm };

inline const char* to_string(GaussianLogSnr n) {
  switch (n) {
    case GaussianLogSnr::Edm: return "edm";
    case GaussianLogSnr::Iddpm: return "iddpm";
    case GaussianLogSnr::Fm: return "fm";
  }
  return "?";
}

// lambda(t). IDDPM and FM return signed infinities at the endpoints; EDM's
// quantile diverges there and throws.
inline double gaussian_log_snr(GaussianLogSnr name, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("gaussian_log_snr: t must lie in [0,1]");
  switch (name) {
    case GaussianLogSnr::Edm:
      if (t == 0.0 || t == 1.0) throw DomainError("gaussian_log_snr: EDM diverges at endpoints");
      return kEdmPrior.quantile(1.0 - t);
    case GaussianLogSnr::Iddpm:
      // -2 log tan(pi t / 2), with cos(pi t / 2) written as sin(pi (1 - t) / 2)
      // so both endpoints give exact infinities.
      return 2.0 * (std::log(std::sin(0.5 * std::numbers::pi * (1.0 - t))) -
                    std::log(std::sin(0.5 * std::numbers::pi * t)));
    case GaussianLogSnr::Fm:
      return 2.0 * (std::log1p(-t) - std::log(t));
  }
  return 0.0;
}

// d lambda / dt, analytic.
inline double gaussian_log_snr_derivative(GaussianLogSnr name, double t) {
  if (!(t > 0.0 && t < 1.0)) throw DomainError("gaussian_log_snr_derivative: t must lie in (0,1)");
  switch (name) {
    case GaussianLogSnr::Edm:
      return -1.0 / kEdmPrior.pdf(gaussian_log_snr(name, t));
    case GaussianLogSnr::Iddpm:
      return -2.0 * std::numbers::pi / std::sin(std::numbers::pi * t);
    case GaussianLogSnr::Fm:
      return -2.0 / (t * (1.0 - t));
  }
  return 0.0;
}

}  // namespace maskdiff
