#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "maskdiff/errors.hpp"
#include "maskdiff/rng.hpp"
#include "maskdiff/tokens.hpp"

namespace maskdiff {

// Logits are clamped to this magnitude before the softmax.
inline constexpr double kLogitClamp = 50.0;

using Gradient = std::vector<double>;

struct LossGrad {
  double loss = 0.0;
  Gradient grad;
};

// Anything that maps a noisy sequence to per-position clean-token
// distributions. No time input: the prediction depends on z alone.
template <class D>
concept Denoiser = requires(const D& d, const TokenSeq& z, const TokenSeq& x, std::span<const double> w) {
  { d.vocab() } -> std::convertible_to<int>;
  { d.length() } -> std::convertible_to<std::size_t>;
  { d.predict(z) } -> std::same_as<Prediction>;
  { d.loss_and_grad(z, x, w) } -> std::same_as<LossGrad>;
  { d.num_params() } -> std::convertible_to<std::size_t>;
};

template <class D>
concept TrainableDenoiser = Denoiser<D> && requires(D& d) {
  { d.params() } -> std::same_as<std::span<double>>;
};

namespace detail {

// Softmax of the clamped logits; fills `out` and returns log-sum-exp.
inline double softmax_row(std::span<const double> logits, std::span<double> out) {
  double mx = -kLogitClamp;
  for (double l : logits) mx = std::max(mx, std::clamp(l, -kLogitClamp, kLogitClamp));
  double sum = 0.0;
  for (std::size_t v = 0; v < logits.size(); ++v) {
    out[v] = std::exp(std::clamp(logits[v], -kLogitClamp, kLogitClamp) - mx);
    sum += out[v];
  }
  for (double& o : out) o /= sum;
  return mx + std::log(sum);
}

inline void check_weights(const TokenSeq& z, const TokenSeq& x, std::span<const double> w, std::size_t length,
                          int vocab) {
  if (z.size() != length || x.size() != length || w.size() != length || z.vocab() != vocab || x.vocab() != vocab)
    throw ShapeError("loss_and_grad: shape mismatch");
  for (std::size_t p = 0; p < length; ++p) {
    if (!(w[p] >= 0.0)) throw PreconditionError("position weights must be non-negative");
    if (!z.is_masked(p) && w[p] != 0.0) throw PreconditionError("position weight on an unmasked position");
    if (x.is_masked(p)) throw PreconditionError("clean sequence contains MASK");
  }
}

// d loss / d logit for one position: w (softmax - onehot(x)), zero where the clamp is active.
inline void logit_grad(std::span<const double> logits, std::span<const double> probs, Token x, double w,
                       std::span<double> out) {
  for (std::size_t v = 0; v < logits.size(); ++v) {
    const bool clamped = std::abs(logits[v]) > kLogitClamp;
    out[v] = clamped ? 0.0 : w * (probs[v] - (static_cast<Token>(v) == x ? 1.0 : 0.0));
  }
}

}  // namespace detail

// sum_p w_p * -log mu_p[x_p]; infinite if a weighted target has zero mass.
inline double weighted_cross_entropy(const Prediction& mu, const TokenSeq& x, std::span<const double> w) {
  double loss = 0.0;
  for (std::size_t p = 0; p < x.size(); ++p) {
    if (w[p] == 0.0) continue;
    loss += w[p] * -std::log(mu(p, x[p]));
  }
  return loss;
}

// One logit table per noisy state: the most expressive denoiser class on an
// enumerable state space.
class TabularDenoiser {
 public:
  TabularDenoiser(int vocab, std::size_t length, std::uint64_t seed = 0)
      : space_(vocab, length), logits_(space_.size() * length * vocab, 0.0), seed_(seed) {}

  int vocab() const noexcept { return space_.vocab(); }
  std::size_t length() const noexcept { return space_.length(); }
  std::uint64_t seed() const noexcept { return seed_; }
  const StateSpace& space() const noexcept { return space_; }
  std::size_t num_params() const noexcept { return logits_.size(); }
  std::span<double> params() noexcept { return logits_; }
  std::span<const double> params() const noexcept { return logits_; }

  std::span<double> logits(const TokenSeq& z, std::size_t p) { return {logits_.data() + offset(z, p), stride()}; }
  std::span<const double> logits(const TokenSeq& z, std::size_t p) const {
    return {logits_.data() + offset(z, p), stride()};
  }

  // Sets the logits of state z so that predict(z) returns `dist` (zeros map
  // to the clamp floor).
  void set_prediction(const TokenSeq& z, const Prediction& dist) {
    for (std::size_t p = 0; p < length(); ++p) {
      auto row = logits(z, p);
      for (int v = 0; v < vocab(); ++v) {
        const double q = dist(p, v);
        row[v] = q > 0.0 ? std::max(std::log(q), -kLogitClamp) : -kLogitClamp;
      }
    }
  }

  Prediction predict(const TokenSeq& z) const {
    Prediction out(length(), vocab());
    for (std::size_t p = 0; p < length(); ++p) detail::softmax_row(logits(z, p), out.row(p));
    return out;
  }

  LossGrad loss_and_grad(const TokenSeq& z, const TokenSeq& x, std::span<const double> w) const {
    detail::check_weights(z, x, w, length(), vocab());
    LossGrad out{0.0, Gradient(num_params(), 0.0)};
    std::vector<double> probs(stride());
    for (std::size_t p = 0; p < length(); ++p) {
      if (w[p] == 0.0) continue;
      const auto row = logits(z, p);
      const double lse = detail::softmax_row(row, probs);
      out.loss += w[p] * (lse - std::clamp(row[x[p]], -kLogitClamp, kLogitClamp));
      detail::logit_grad(row, probs, x[p], w[p], {out.grad.data() + offset(z, p), stride()});
    }
    return out;
  }

 private:
  std::size_t stride() const noexcept { return static_cast<std::size_t>(vocab()); }
  std::size_t offset(const TokenSeq& z, std::size_t p) const { return (space_.encode(z) * length() + p) * stride(); }

  StateSpace space_;
  std::vector<double> logits_;
  std::uint64_t seed_;
};

// Two tanh hidden layers of equal width over the one-hot encoding of z
// (L * (V+1) inputs) producing L * V logits.
class MlpDenoiser {
 public:
  MlpDenoiser(int vocab, std::size_t length, std::size_t hidden, std::uint64_t seed)
      : vocab_(vocab), length_(length), hidden_(hidden), seed_(seed) {
    if (vocab < 2 || length < 1) throw PreconditionError("MlpDenoiser: need V >= 2 and L >= 1");
    if (hidden == 0) throw PreconditionError("MlpDenoiser: hidden width must be >= 1");
    params_.assign(num_params(), 0.0);
    Rng rng(seed, 0x6d6c70);
    auto fill = [&](std::size_t off, std::size_t count, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < count; ++i) params_[off + i] = rng.uniform(-bound, bound);
    };
    fill(w1(), hidden_ * inputs(), inputs());
    fill(b1(), hidden_, inputs());
    fill(w2(), hidden_ * hidden_, hidden_);
    fill(b2(), hidden_, hidden_);
    fill(w3(), outputs() * hidden_, hidden_);
    fill(b3(), outputs(), hidden_);
  }

  int vocab() const noexcept { return vocab_; }
  std::size_t length() const noexcept { return length_; }
  std::size_t hidden() const noexcept { return hidden_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t num_params() const noexcept {
    return hidden_ * inputs() + hidden_ + hidden_ * hidden_ + hidden_ + outputs() * hidden_ + outputs();
  }
  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }

  Prediction predict(const TokenSeq& z) const {
    const Activations a = forward(z);
    Prediction out(length_, vocab_);
    for (std::size_t p = 0; p < length_; ++p)
      detail::softmax_row({a.logits.data() + p * vocab_, static_cast<std::size_t>(vocab_)}, out.row(p));
    return out;
  }

  LossGrad loss_and_grad(const TokenSeq& z, const TokenSeq& x, std::span<const double> w) const {
    detail::check_weights(z, x, w, length_, vocab_);
    LossGrad out{0.0, Gradient(num_params(), 0.0)};
    bool any = false;
    for (double wp : w) any = any || wp != 0.0;
    if (!any) return out;

    const Activations a = forward(z);
    std::vector<double> d_out(outputs(), 0.0);
    std::vector<double> probs(vocab_);
    for (std::size_t p = 0; p < length_; ++p) {
      if (w[p] == 0.0) continue;
      std::span<const double> row{a.logits.data() + p * vocab_, static_cast<std::size_t>(vocab_)};
      const double lse = detail::softmax_row(row, probs);
      out.loss += w[p] * (lse - std::clamp(row[x[p]], -kLogitClamp, kLogitClamp));
      detail::logit_grad(row, probs, x[p], w[p], {d_out.data() + p * vocab_, static_cast<std::size_t>(vocab_)});
    }

    Gradient& g = out.grad;
    const double* W2 = params_.data() + w2();
    const double* W3 = params_.data() + w3();
    std::vector<double> d2(hidden_, 0.0);
    for (std::size_t o = 0; o < outputs(); ++o) {
      if (d_out[o] == 0.0) continue;
      g[b3() + o] += d_out[o];
      for (std::size_t h = 0; h < hidden_; ++h) {
        g[w3() + o * hidden_ + h] += d_out[o] * a.h2[h];
        d2[h] += W3[o * hidden_ + h] * d_out[o];
      }
    }
    for (std::size_t h = 0; h < hidden_; ++h) d2[h] *= 1.0 - a.h2[h] * a.h2[h];
    std::vector<double> d1(hidden_, 0.0);
    for (std::size_t h = 0; h < hidden_; ++h) {
      g[b2() + h] += d2[h];
      for (std::size_t k = 0; k < hidden_; ++k) {
        g[w2() + h * hidden_ + k] += d2[h] * a.h1[k];
        d1[k] += W2[h * hidden_ + k] * d2[h];
      }
    }
    for (std::size_t h = 0; h < hidden_; ++h) {
      d1[h] *= 1.0 - a.h1[h] * a.h1[h];
      g[b1() + h] += d1[h];
      for (std::size_t idx : active_inputs(z)) g[w1() + h * inputs() + idx] += d1[h];
    }
    return out;
  }

 private:
  struct Activations {
    std::vector<double> h1, h2, logits;
  };

  std::size_t inputs() const noexcept { return length_ * (static_cast<std::size_t>(vocab_) + 1); }
  std::size_t outputs() const noexcept { return length_ * static_cast<std::size_t>(vocab_); }
  std::size_t w1() const noexcept { return 0; }
  std::size_t b1() const noexcept { return hidden_ * inputs(); }
  std::size_t w2() const noexcept { return b1() + hidden_; }
  std::size_t b2() const noexcept { return w2() + hidden_ * hidden_; }
  std::size_t w3() const noexcept { return b2() + hidden_; }
  std::size_t b3() const noexcept { return w3() + outputs() * hidden_; }

  std::vector<std::size_t> active_inputs(const TokenSeq& z) const {
    if (z.size() != length_ || z.vocab() != vocab_) throw ShapeError("MlpDenoiser: input shape mismatch");
    std::vector<std::size_t> idx(length_);
    for (std::size_t p = 0; p < length_; ++p)
      idx[p] = p * (vocab_ + 1) + (z.is_masked(p) ? static_cast<std::size_t>(vocab_) : static_cast<std::size_t>(z[p]));
    return idx;
  }

  Activations forward(const TokenSeq& z) const {
    const auto active = active_inputs(z);
    Activations a{std::vector<double>(hidden_), std::vector<double>(hidden_), std::vector<double>(outputs())};
    for (std::size_t h = 0; h < hidden_; ++h) {
      double s = params_[b1() + h];
      for (std::size_t idx : active) s += params_[w1() + h * inputs() + idx];
      a.h1[h] = std::tanh(s);
    }
    for (std::size_t h = 0; h < hidden_; ++h) {
      double s = params_[b2() + h];
      for (std::size_t k = 0; k < hidden_; ++k) s += params_[w2() + h * hidden_ + k] * a.h1[k];
      a.h2[h] = std::tanh(s);
    }
    for (std::size_t o = 0; o < outputs(); ++o) {
      double s = params_[b3() + o];
      for (std::size_t h = 0; h < hidden_; ++h) s += params_[w3() + o * hidden_ + h] * a.h2[h];
      a.logits[o] = s;
    }
    return a;
  }

  int vocab_;
  std::size_t length_;
  std::size_t hidden_;
  std::uint64_t seed_;
  std::vector<double> params_;
};

enum class DenoiserKind { Tabular, Mlp };

inline const char* to_string(DenoiserKind k) { return k == DenoiserKind::Tabular ? "tabular" : "mlp"; }

inline DenoiserKind parse_denoiser_kind(const std::string& s) {
  if (s == "tabular") return DenoiserKind::Tabular;
  if (s == "mlp") return DenoiserKind::Mlp;
  throw PreconditionError("unknown denoiser kind '" + s + "'");
}

struct DenoiserDims {
  int vocab = 2;
  std::size_t length = 2;
  std::size_t hidden = 16;  // MLP only
};

// Runtime-selected denoiser; satisfies the same concept as its alternatives.
class AnyDenoiser {
 public:
  AnyDenoiser(TabularDenoiser d) : impl_(std::move(d)) {}
  AnyDenoiser(MlpDenoiser d) : impl_(std::move(d)) {}

  DenoiserKind kind() const noexcept {
    return std::holds_alternative<TabularDenoiser>(impl_) ? DenoiserKind::Tabular : DenoiserKind::Mlp;
  }
  DenoiserDims dims() const {
    return {vocab(), length(), kind() == DenoiserKind::Mlp ? std::get<MlpDenoiser>(impl_).hidden() : 0};
  }

  int vocab() const {
    return std::visit([](const auto& d) { return d.vocab(); }, impl_);
  }
  std::size_t length() const {
    return std::visit([](const auto& d) { return d.length(); }, impl_);
  }
  std::uint64_t seed() const {
    return std::visit([](const auto& d) { return d.seed(); }, impl_);
  }
  std::size_t num_params() const {
    return std::visit([](const auto& d) { return d.num_params(); }, impl_);
  }
  std::span<double> params() {
    return std::visit([](auto& d) { return d.params(); }, impl_);
  }
  std::span<const double> params() const {
    return std::visit([](const auto& d) { return std::span<const double>(d.params()); }, impl_);
  }
  Prediction predict(const TokenSeq& z) const {
    return std::visit([&](const auto& d) { return d.predict(z); }, impl_);
  }
  LossGrad loss_and_grad(const TokenSeq& z, const TokenSeq& x, std::span<const double> w) const {
    return std::visit([&](const auto& d) { return d.loss_and_grad(z, x, w); }, impl_);
  }

  template <class T>
  const T* get_if() const {
    return std::get_if<T>(&impl_);
  }

 private:
  std::variant<TabularDenoiser, MlpDenoiser> impl_;
};

static_assert(TrainableDenoiser<TabularDenoiser>);
static_assert(TrainableDenoiser<MlpDenoiser>);
static_assert(TrainableDenoiser<AnyDenoiser>);

// Tabular: all-zero logits (uniform predictions). MLP: fan-in scaled uniform
// weights, deterministic per seed.
inline AnyDenoiser init(DenoiserKind kind, const DenoiserDims& dims, std::uint64_t seed) {
  if (kind == DenoiserKind::Tabular) return TabularDenoiser(dims.vocab, dims.length, seed);
  return MlpDenoiser(dims.vocab, dims.length, dims.hidden, seed);
}

struct GradCheckOptions {
  int vocab = 3;
  std::size_t length = 3;
  std::size_t hidden = 8;
  double logit_scale = 1.0;   // tabular logits drawn uniformly from [-scale, scale]
  bool zero_weights = false;
  double step = 1e-5;
  double mlp_fraction = 0.01;  // share of MLP parameters probed
  std::size_t mlp_min_probes = 32;
};

// |analytic - central difference| / max(|analytic|, |fd|, 1e-6); both-zero
// entries contribute 0.
inline double relative_gradient_error(double analytic, double fd) {
  const double scale = std::max({std::abs(analytic), std::abs(fd), 1e-6});
  return std::abs(analytic - fd) / scale;
}

// Compares loss_and_grad against central finite differences on a random
// instance and returns the maximum relative error.
inline double grad_check(DenoiserKind kind, std::uint64_t seed, const GradCheckOptions& opt = {}) {
  Rng rng(seed, 0x67726164);
  AnyDenoiser den = init(kind, {opt.vocab, opt.length, opt.hidden}, seed);
  if (kind == DenoiserKind::Tabular)
    for (double& p : den.params()) p = rng.uniform(-opt.logit_scale, opt.logit_scale);

  std::vector<Token> zt(opt.length), xt(opt.length);
  std::vector<double> w(opt.length, 0.0);
  for (std::size_t p = 0; p < opt.length; ++p) {
    xt[p] = static_cast<Token>(rng.below(opt.vocab));
    const bool masked = p == 0 || rng.uniform() < 0.6;
    zt[p] = masked ? kMask : xt[p];
    if (masked && !opt.zero_weights) w[p] = rng.uniform(0.1, 2.0);
  }
  const TokenSeq z(zt, opt.vocab), x(xt, opt.vocab);

  const LossGrad lg = den.loss_and_grad(z, x, w);
  std::vector<std::size_t> probes;
  if (kind == DenoiserKind::Tabular) {
    probes.resize(den.num_params());
    for (std::size_t i = 0; i < probes.size(); ++i) probes[i] = i;
  } else {
    const std::size_t n = std::max(opt.mlp_min_probes,
                                   static_cast<std::size_t>(opt.mlp_fraction * static_cast<double>(den.num_params())));
    for (std::size_t i = 0; i < n; ++i) probes.push_back(rng.below(den.num_params()));
  }

  double worst = 0.0;
  auto params = den.params();
  for (std::size_t i : probes) {
    const double orig = params[i];
    params[i] = orig + opt.step;
    const double up = den.loss_and_grad(z, x, w).loss;
    params[i] = orig - opt.step;
    const double down = den.loss_and_grad(z, x, w).loss;
    params[i] = orig;
    const double fd = (up - down) / (2.0 * opt.step);
    worst = std::max(worst, relative_gradient_error(lg.grad[i], fd));
  }
  return worst;
}

}  // namespace maskdiff
