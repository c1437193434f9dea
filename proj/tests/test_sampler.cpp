#include <cmath>

#include <gtest/gtest.h>

#include "maskdiff/sampler.hpp"
#include "maskdiff/verify.hpp"

using namespace maskdiff;

namespace {
const Schedule kCos = Schedule::cosine();
}

TEST(Sampler, TrajectoryInvariants) {
  Rng init_rng(1, 0);
  const auto den = verify::random_tabular(3, 4, init_rng);
  Rng rng(2, 0);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<TokenSeq> traj;
    const TokenSeq x = ancestral_sample(den, kCos, 12, rng, &traj);
    ASSERT_EQ(traj.size(), 13u);
    EXPECT_EQ(traj.front(), TokenSeq::all_mask(4, 3));
    EXPECT_FALSE(x.has_mask());
    EXPECT_EQ(traj.back(), x);
    for (std::size_t i = 1; i < traj.size(); ++i) {
      EXPECT_LE(traj[i].mask_count(), traj[i - 1].mask_count());
      for (std::size_t p = 0; p < 4; ++p) {
        if (!traj[i - 1].is_masked(p)) {
          EXPECT_EQ(traj[i][p], traj[i - 1][p]);
        }
      }
    }
  }
}

TEST(Sampler, SingleStepDecodesFromAllMask) {
  TabularDenoiser den(2, 2);
  Prediction mu(2, 2);
  mu(0, 1) = 1.0, mu(1, 0) = 1.0;
  den.set_prediction(TokenSeq::all_mask(2, 2), mu);
  Rng rng(3, 0);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(ancestral_sample(den, kCos, 1, rng), TokenSeq({1, 0}, 2));
  EXPECT_THROW(ancestral_sample(den, kCos, 0, rng), PreconditionError);
}

TEST(Sampler, PerfectSingleSequenceDenoiser) {
  const EmpiricalDataset d({TokenSeq({2, 0, 1}, 3)}, {1.0});
  const auto den = optimal_denoiser(d);
  const auto batch = sample_batch(den, kCos, 8, 500, 4);
  for (const auto& s : batch.samples) EXPECT_EQ(s, d.sequence(0));
}

TEST(Sampler, MatchesExactMarginal) {
  Rng init_rng(9, 0);
  const auto den = verify::random_tabular(2, 3, init_rng);
  const auto exact = exact_model_marginal(den, kCos, TimeGrid(16));
  const auto batch = sample_batch(den, kCos, 16, 100000, 11);
  EXPECT_LE(tv_distance(empirical_distribution(batch), exact), 0.01);
}

TEST(Sampler, TvDecaysLikeInverseRootN) {
  Rng init_rng(10, 0);
  const auto den = verify::random_tabular(2, 3, init_rng);
  const auto exact = exact_model_marginal(den, kCos, TimeGrid(8));
  // average TV over independent batches at each size, then fit log TV ~ slope * log n
  std::vector<double> xs, ys;
  for (std::size_t n : {250, 1000, 4000, 16000}) {
    double tv = 0.0;
    const int reps = 24;
    for (int r = 0; r < reps; ++r) tv += tv_distance(empirical_distribution(sample_batch(den, kCos, 8, n, 1000 + r * 7 + n)), exact);
    xs.push_back(std::log(static_cast<double>(n)));
    ys.push_back(std::log(tv / reps));
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i] / xs.size(), my += ys[i] / ys.size();
  double num = 0, den2 = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) num += (xs[i] - mx) * (ys[i] - my), den2 += (xs[i] - mx) * (xs[i] - mx);
  EXPECT_NEAR(num / den2, -0.5, 0.15);
}

TEST(Sampler, BatchDeterministicAcrossThreadCounts) {
  Rng init_rng(12, 0);
  const auto den = verify::random_tabular(2, 3, init_rng);
  setenv("MASKDIFF_THREADS", "1", 1);
  const auto a = sample_batch(den, kCos, 8, 300, 5);
  setenv("MASKDIFF_THREADS", "3", 1);
  const auto b = sample_batch(den, kCos, 8, 300, 5);
  unsetenv("MASKDIFF_THREADS");
  EXPECT_EQ(a.samples, b.samples);
}

TEST(Empirical, SumsToOne) {
  SampleBatch b{{TokenSeq({0, 1}, 2), TokenSeq({0, 1}, 2), TokenSeq({1, 1}, 2)}, 4, 0};
  const auto h = empirical_distribution(b);
  ASSERT_EQ(h.size(), 4u);
  EXPECT_NEAR(h[1], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(h[3], 1.0 / 3.0, 1e-15);
  EXPECT_THROW(empirical_distribution(SampleBatch{}), PreconditionError);
}

TEST(TvDistance, Values) {
  const std::vector<double> a{0.6, 0.4}, b{0.5, 0.5}, p{1.0, 0.0}, q{0.0, 1.0};
  EXPECT_NEAR(tv_distance(a, b), 0.1, 1e-15);
  EXPECT_EQ(tv_distance(a, a), 0.0);
  EXPECT_EQ(tv_distance(p, q), 1.0);
  EXPECT_THROW(tv_distance(a, std::vector<double>{1.0}), ShapeError);
}
