#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "maskdiff/denoiser.hpp"
#include "maskdiff/errors.hpp"
#include "maskdiff/masked_process.hpp"
#include "maskdiff/parallel.hpp"
#include "maskdiff/rng.hpp"
#include "maskdiff/tokens.hpp"

namespace maskdiff {

namespace detail {

inline Token draw(const TokenDist& d, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  Token last = kMask;
  for (int k = 0; k <= d.vocab(); ++k) {
    const Token v = k == d.vocab() ? kMask : k;
    if (d[v] <= 0.0) continue;
    acc += d[v];
    last = v;
    if (u < acc) return v;
  }
  return last;
}

}  // namespace detail

// Ancestral sampling of the discrete-time reverse chain: all-MASK at t = 1,
// reverse kernels for i = T..1, then residual MASKs at t = 0 are filled from
// mu_theta (the same decoder the exact marginal uses). When `trajectory` is
// given it receives z_t(T), ..., z_t(0).
template <Denoiser D>
TokenSeq ancestral_sample(const D& den, const Schedule& schedule, std::size_t T, Rng& rng,
                          std::vector<TokenSeq>* trajectory = nullptr) {
  if (T < 1) throw PreconditionError("ancestral_sample: T must be >= 1");
  TokenSeq z = TokenSeq::all_mask(den.length(), den.vocab());
  if (trajectory) trajectory->push_back(z);
  for (std::size_t i = T; i >= 1; --i) {
    if (z.has_mask()) {
      const double s = static_cast<double>(i - 1) / static_cast<double>(T);
      const double t = i == T ? 1.0 : static_cast<double>(i) / static_cast<double>(T);
      const Prediction mu = den.predict(z);
      TokenSeq next = z;
      for (std::size_t p = 0; p < z.size(); ++p)
        if (z.is_masked(p)) next.set(p, detail::draw(reverse_kernel(schedule, s, t, kMask, mu.row(p)), rng));
      z = std::move(next);
    }
    if (trajectory) trajectory->push_back(z);
  }
  if (z.has_mask()) {
    const Prediction mu = den.predict(z);
    for (std::size_t p = 0; p < z.size(); ++p) {
      if (!z.is_masked(p)) continue;
      TokenDist d(z.vocab());
      for (int v = 0; v < z.vocab(); ++v) d[v] = mu(p, v);
      z.set(p, detail::draw(d, rng));
    }
    if (trajectory) trajectory->back() = z;
  }
  return z;
}

struct SampleBatch {
  std::vector<TokenSeq> samples;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
};

// n independent samples; sample k uses substream k of `seed`, so the batch
// is identical whatever the worker count.
template <Denoiser D>
SampleBatch sample_batch(const D& den, const Schedule& schedule, std::size_t T, std::size_t n, std::uint64_t seed) {
  SampleBatch batch{std::vector<TokenSeq>(n), T, seed};
  const Rng root(seed, 0x73616d70);
  parallel_for(n, [&](std::size_t k) {
    Rng rng = root.split(k);
    batch.samples[k] = ancestral_sample(den, schedule, T, rng);
  });
  return batch;
}

// Normalised histogram over the V^L clean sequences (StateSpace::encode_clean order).
inline std::vector<double> empirical_distribution(const SampleBatch& batch) {
  if (batch.samples.empty()) throw PreconditionError("empirical_distribution: no samples");
  const StateSpace space(batch.samples.front().vocab(), batch.samples.front().size());
  std::vector<double> h(space.clean_size(), 0.0);
  for (const auto& s : batch.samples) h[space.encode_clean(s)] += 1.0;
  for (double& v : h) v /= static_cast<double>(batch.samples.size());
  return h;
}

inline double tv_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("tv_distance: distributions have different supports");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
  return 0.5 * d;
}

}  // namespace maskdiff
