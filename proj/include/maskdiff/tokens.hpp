#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "maskdiff/errors.hpp"

namespace maskdiff {

using Token = int;

// MASK sentinel. Never part of the vocabulary {0..V-1}.
inline constexpr Token kMask = -1;

// Fixed-length sequence over {0..V-1} plus MASK.
class TokenSeq {
 public:
  TokenSeq() = default;
  TokenSeq(std::vector<Token> tokens, int vocab) : tokens_(std::move(tokens)), vocab_(vocab) {
    if (vocab_ < 2) throw PreconditionError("TokenSeq: vocabulary size must be >= 2");
    if (tokens_.empty()) throw PreconditionError("TokenSeq: length must be >= 1");
    for (Token v : tokens_)
      if (v != kMask && (v < 0 || v >= vocab_)) throw PreconditionError("TokenSeq: token outside vocabulary");
  }

  static TokenSeq all_mask(std::size_t length, int vocab) {
    return TokenSeq(std::vector<Token>(length, kMask), vocab);
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  int vocab() const noexcept { return vocab_; }
  Token operator[](std::size_t p) const { return tokens_[p]; }
  void set(std::size_t p, Token v) {
    if (v != kMask && (v < 0 || v >= vocab_)) throw PreconditionError("TokenSeq: token outside vocabulary");
    tokens_[p] = v;
  }
  std::span<const Token> tokens() const noexcept { return tokens_; }

  bool is_masked(std::size_t p) const { return tokens_[p] == kMask; }
  std::size_t mask_count() const {
    std::size_t n = 0;
    for (Token v : tokens_) n += v == kMask;
    return n;
  }
  bool has_mask() const { return mask_count() != 0; }

  std::string to_string() const {
    std::string s;
    for (Token v : tokens_) s += v == kMask ? std::string("m") : std::to_string(v);
    return s;
  }

  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;

 private:
  std::vector<Token> tokens_;
  int vocab_ = 2;
};

// Distribution over {0..V-1} plus MASK; MASK lives at index V.
class TokenDist {
 public:
  explicit TokenDist(int vocab) : p_(static_cast<std::size_t>(vocab) + 1, 0.0) {}

  static TokenDist delta(Token v, int vocab) {
    TokenDist d(vocab);
    d[v] = 1.0;
    return d;
  }

  int vocab() const noexcept { return static_cast<int>(p_.size()) - 1; }
  double& operator[](Token v) { return p_[index(v)]; }
  double operator[](Token v) const { return p_[index(v)]; }
  std::span<const double> values() const noexcept { return p_; }

  double sum() const {
    double s = 0.0;
    for (double x : p_) s += x;
    return s;
  }

  bool is_normalized(double tol = 1e-12) const {
    for (double x : p_)
      if (!(x >= 0.0)) return false;
    return std::abs(sum() - 1.0) <= tol;
  }

 private:
  std::size_t index(Token v) const {
    const std::size_t i = v == kMask ? p_.size() - 1 : static_cast<std::size_t>(v);
    if (v != kMask && (v < 0 || i + 1 >= p_.size())) throw PreconditionError("TokenDist: token outside vocabulary");
    return i;
  }

  std::vector<double> p_;
};

// Per-position distributions over the vocabulary (L rows of V entries).
class Prediction {
 public:
  Prediction() = default;
  Prediction(std::size_t length, int vocab)
      : length_(length), vocab_(vocab), p_(length * static_cast<std::size_t>(vocab), 0.0) {}

  std::size_t length() const noexcept { return length_; }
  int vocab() const noexcept { return vocab_; }
  std::span<double> row(std::size_t p) { return {p_.data() + p * vocab_, static_cast<std::size_t>(vocab_)}; }
  std::span<const double> row(std::size_t p) const {
    return {p_.data() + p * vocab_, static_cast<std::size_t>(vocab_)};
  }
  double operator()(std::size_t p, Token v) const { return p_[p * vocab_ + v]; }
  double& operator()(std::size_t p, Token v) { return p_[p * vocab_ + v]; }

 private:
  std::size_t length_ = 0;
  int vocab_ = 0;
  std::vector<double> p_;
};

// Index maps for the (V+1)^L noisy state space and the V^L clean space.
// MASK is digit V; position 0 is the most significant digit.
class StateSpace {
 public:
  StateSpace(int vocab, std::size_t length) : vocab_(vocab), length_(length) {
    if (vocab < 2 || length < 1) throw PreconditionError("StateSpace: need V >= 2 and L >= 1");
    size_ = checked_pow(static_cast<std::uint64_t>(vocab) + 1, length);
    clean_size_ = checked_pow(static_cast<std::uint64_t>(vocab), length);
  }

  int vocab() const noexcept { return vocab_; }
  std::size_t length() const noexcept { return length_; }
  std::size_t size() const noexcept { return size_; }
  std::size_t clean_size() const noexcept { return clean_size_; }

  std::size_t encode(const TokenSeq& z) const {
    check(z);
    std::size_t idx = 0;
    for (Token v : z.tokens()) idx = idx * (vocab_ + 1) + (v == kMask ? vocab_ : v);
    return idx;
  }

  TokenSeq decode(std::size_t idx) const {
    std::vector<Token> t(length_);
    for (std::size_t p = length_; p-- > 0;) {
      const int d = static_cast<int>(idx % (vocab_ + 1));
      t[p] = d == vocab_ ? kMask : d;
      idx /= vocab_ + 1;
    }
    return TokenSeq(std::move(t), vocab_);
  }

  std::size_t encode_clean(const TokenSeq& x) const {
    check(x);
    std::size_t idx = 0;
    for (Token v : x.tokens()) {
      if (v == kMask) throw PreconditionError("encode_clean: sequence contains MASK");
      idx = idx * vocab_ + v;
    }
    return idx;
  }

  TokenSeq decode_clean(std::size_t idx) const {
    std::vector<Token> t(length_);
    for (std::size_t p = length_; p-- > 0;) {
      t[p] = static_cast<Token>(idx % vocab_);
      idx /= vocab_;
    }
    return TokenSeq(std::move(t), vocab_);
  }

  void check(const TokenSeq& z) const {
    if (z.size() != length_ || z.vocab() != vocab_) throw ShapeError("sequence does not match state space");
  }

 private:
  static std::size_t checked_pow(std::uint64_t base, std::size_t exp) {
    std::uint64_t r = 1;
    for (std::size_t i = 0; i < exp; ++i) {
      if (r > std::numeric_limits<std::uint32_t>::max() / base) throw ResourceError("state space too large");
      r *= base;
    }
    return static_cast<std::size_t>(r);
  }

  int vocab_;
  std::size_t length_;
  std::size_t size_ = 0;
  std::size_t clean_size_ = 0;
};

}  // namespace maskdiff
