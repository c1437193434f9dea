#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>

#include "maskdiff/weightings.hpp"

using namespace maskdiff;

namespace {
constexpr double kPi = std::numbers::pi;
const double kInf = std::numeric_limits<double>::infinity();
const Schedule kCos = Schedule::cosine();
const Schedule kLin = Schedule::linear();

WeightingSpec M(Family f, double k = 0.0) { return WeightingSpec::masked(f, k); }
WeightingSpec G(Family f, double k = 0.0) { return WeightingSpec::gaussian(f, k); }
}  // namespace

TEST(WHat, Values) {
  EXPECT_NEAR(w_hat(M(Family::Iddpm), 0.0), 1.0, 1e-15);
  EXPECT_NEAR(w_hat(M(Family::Sigmoid), 0.0), 0.5, 1e-15);
  EXPECT_NEAR(w_hat(M(Family::Fm), 2.0 * std::log(3.0)), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(w_hat(M(Family::Elbo), 3.0), 1.0);
  // mpmath
  EXPECT_NEAR(w_hat(M(Family::Edm), 0.0), 0.50410567608154866407, 1e-14);
  EXPECT_NEAR(w_hat(M(Family::Edm), 1.0), 0.34655500862808782696, 1e-14);
  EXPECT_THROW(w_hat(M(Family::Simple), 0.0), UnsupportedError);
}

TEST(WHat, EdmVanishesAtInfinities) {
  EXPECT_EQ(w_hat(M(Family::Edm), kInf), 0.0);
  EXPECT_EQ(w_hat(M(Family::Edm), -kInf), 0.0);
  EXPECT_TRUE(std::isfinite(w_hat(M(Family::Edm), -800.0)));
}

TEST(WTilde, MaskedValues) {
  EXPECT_NEAR(w_tilde(M(Family::Iddpm), kCos, 1.0 / 3.0), 1.0, 1e-15);
  for (double t : {0.1, 0.42, 0.9}) EXPECT_NEAR(w_tilde(M(Family::Simple), kLin, t), t, 1e-15);
  EXPECT_EQ(w_tilde(M(Family::Elbo), kCos, 0.3), 1.0);
  EXPECT_EQ(w_tilde(M(Family::Fm), kCos, 1.0), kInf);
  EXPECT_EQ(w_tilde(M(Family::Simple), kCos, 1.0), kInf);
  // mpmath: EDM composed with the cosine log-SNR
  EXPECT_NEAR(w_tilde(M(Family::Edm), kCos, 0.5), 0.69567322856620648950, 1e-13);
  EXPECT_NEAR(w_tilde(M(Family::Edm), kCos, 0.9), 0.98396041080729644376, 1e-13);
}

TEST(WTilde, GaussianValues) {
  EXPECT_NEAR(w_tilde(G(Family::Fm), kCos, 0.25), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(w_tilde(G(Family::Iddpm), kCos, 0.5), 1.0, 1e-15);
  EXPECT_NEAR(w_tilde(G(Family::Sigmoid), kCos, 0.5), 0.5, 1e-15);
  EXPECT_EQ(w_tilde(G(Family::Fm), kCos, 1.0), kInf);
  EXPECT_THROW(G(Family::Simple), UnsupportedError);
}

TEST(WTilde, NeverNaNOnClosedInterval) {
  for (Family f : {Family::Elbo, Family::Edm, Family::Iddpm, Family::Sigmoid, Family::Fm, Family::Simple})
    for (const Schedule* s : {&kCos, &kLin})
      for (double t : {0.0, 1e-300, 0.5, 1.0 - 1e-16, 1.0}) EXPECT_FALSE(std::isnan(w_tilde(M(f), *s, t)));
}

TEST(WTilde, AgreesWithLogSnrComposition) {
  for (Family f : {Family::Elbo, Family::Iddpm, Family::Sigmoid, Family::Fm}) {
    for (double k : {0.0, 2.0, -1.5}) {
      if (f != Family::Sigmoid && k != 0.0) continue;
      for (int i = 0; i <= 98; ++i) {
        const double t = 0.01 + i * 0.01;
        for (const Schedule* s : {&kCos, &kLin}) {
          const double w = w_tilde(M(f, k), *s, t);
          EXPECT_LE(std::abs(w - w_hat(M(f, k), log_snr_masked(*s, t))), 1e-9 * std::max(1.0, w));
        }
        const double w = w_tilde(G(f, k), kCos, t);
        const double l = gaussian_log_snr(gaussian_log_snr_for(f), t);
        EXPECT_LE(std::abs(w - w_hat(G(f, k), l)), 1e-9 * std::max(1.0, w)) << to_string(f) << " t=" << t;
      }
    }
  }
}

TEST(CeWeight, Values) {
  EXPECT_EQ(ce_weight(M(Family::Simple), kCos, 0.7), 1.0);
  // mpmath
  EXPECT_NEAR(ce_weight(M(Family::Elbo), kCos, 0.7), 0.80036070447436739024, 1e-14);
  EXPECT_NEAR(ce_weight(M(Family::Fm), kCos, 0.7), 2.2883684349063803778, 1e-13);
  for (double t : {0.05, 0.5, 0.95}) {
    const double direct = w_tilde(M(Family::Iddpm), kCos, t) * -kCos.alpha_prime(t) / kCos.mask_prob(t);
    EXPECT_NEAR(ce_weight(M(Family::Iddpm), kCos, t), direct, 1e-13);
  }
  EXPECT_THROW(ce_weight(M(Family::Elbo), kCos, 0.0), DomainError);
  EXPECT_THROW(ce_weight(G(Family::Elbo), kCos, 0.5), UnsupportedError);
}

TEST(CeWeight, SimpleIsConstantForEverySchedule) {
  const auto reg = ScheduleRegistry::with_defaults();
  for (const char* name : {"cosine", "linear", "custom:quadratic"})
    for (double t : uniform_grid(1000, 1e-6, 1 - 1e-6))
      EXPECT_NEAR(ce_weight(M(Family::Simple), reg.get(name), t), 1.0, 1e-12);
}

TEST(CeWeight, LimitsNearOne) {
  // sigmoid vanishes, FM stays finite on the cosine schedule
  EXPECT_LT(ce_weight(M(Family::Sigmoid), kCos, 1 - 1e-9), 1e-8);
  const double fm = ce_weight(M(Family::Fm), kCos, 1 - 1e-9);
  EXPECT_TRUE(std::isfinite(fm));
  EXPECT_NEAR(fm, kPi / std::sqrt(2.0), 1e-6);  // (pi^2/4) / (pi / sqrt 8)
}

TEST(Monotone, Verdicts) {
  const auto grid = default_monotone_grid();
  EXPECT_TRUE(check_monotone(M(Family::Sigmoid), kCos, grid).monotone);
  EXPECT_TRUE(check_monotone(M(Family::Fm), kCos, grid).monotone);
  EXPECT_TRUE(check_monotone(M(Family::Simple), kCos, grid).monotone);
  EXPECT_TRUE(check_monotone(M(Family::Elbo), kLin, grid).monotone);
  const auto iddpm = check_monotone(M(Family::Iddpm), kCos, uniform_grid(1000, 0.0005, 0.9995));
  EXPECT_FALSE(iddpm.monotone);
  ASSERT_TRUE(iddpm.first_violation);
  // the peak sits where alpha = 1/2, i.e. t = 1/3
  EXPECT_NEAR(iddpm.first_violation->first, 1.0 / 3.0, 2e-3);
  const auto edm = check_monotone(M(Family::Edm), kCos, grid);
  EXPECT_FALSE(edm.monotone);
  EXPECT_GT(edm.first_violation->first, 0.8);
}

TEST(Monotone, RejectsBadGrid) {
  EXPECT_THROW(check_monotone(M(Family::Elbo), kCos, {0.0, 0.5}), PreconditionError);
  EXPECT_THROW(check_monotone(M(Family::Elbo), kCos, {0.5, 0.4}), PreconditionError);
}

TEST(ImpliedIncrements, Values) {
  const auto e = implied_increments(M(Family::Elbo), kCos, 4);
  ASSERT_EQ(e.size(), 4u);
  EXPECT_EQ(e[0], 1.0);
  for (int i = 1; i < 4; ++i) EXPECT_EQ(e[i], 0.0);
  for (double w : implied_increments(M(Family::Simple), kCos, 8)) EXPECT_GE(w, 0.0);
  const auto id = implied_increments(M(Family::Iddpm), kCos, 8);
  EXPECT_TRUE(std::any_of(id.begin(), id.end(), [](double w) { return w < 0.0; }));
  // prefix sums recover w_tilde on the grid
  const auto sg = implied_increments(M(Family::Sigmoid, 1.0), kCos, 8);
  double acc = 0.0;
  for (int i = 0; i < 8; ++i) {
    acc += sg[i];
    EXPECT_NEAR(acc, w_tilde(M(Family::Sigmoid, 1.0), kCos, (i + 1) / 8.0), 1e-15);
  }
}

TEST(Curves, ElboNormalized) {
  const auto table = emit_curves(M(Family::Elbo), kCos, uniform_grid(50, 0.01, 0.999), true);
  for (const auto& r : table.rows) EXPECT_EQ(r.w_tilde, 1.0);
}

TEST(Curves, FmPeaksAtClip) {
  const auto table = emit_curves(M(Family::Fm), kCos, uniform_grid(1000, 0.001, 0.999), true);
  EXPECT_EQ(table.rows.back().w_tilde, 1.0);
  for (const auto& r : table.rows) EXPECT_LE(r.w_tilde, 1.0);
}

TEST(Curves, SimpleCeColumnAndCsv) {
  const auto table = emit_curves(M(Family::Simple), kCos, uniform_grid(4, 0.2, 0.8), false);
  for (const auto& r : table.rows) EXPECT_EQ(r.ce_weight, 1.0);
  std::ostringstream os;
  write_csv(os, table);
  const std::string csv = os.str();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,w_tilde,w_hat_of_lambda,ce_weight");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Curves, Preconditions) {
  EXPECT_THROW(emit_curves(M(Family::Fm), kCos, uniform_grid(10, 0.1, 0.9995), true), PreconditionError);
  EXPECT_THROW(emit_curves(M(Family::Fm), kCos, {0.0, 0.5}, false), PreconditionError);
}

TEST(Curves, GaussianSideUsesLossWeight) {
  const auto table = emit_curves(G(Family::Elbo), kCos, uniform_grid(5, 0.1, 0.9), false);
  for (const auto& r : table.rows)
    EXPECT_NEAR(r.ce_weight, -gaussian_log_snr_derivative(GaussianLogSnr::Iddpm, r.t), 1e-12);
}
