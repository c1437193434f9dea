#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "maskdiff/errors.hpp"
#include "maskdiff/format.hpp"
#include "maskdiff/tokens.hpp"

namespace maskdiff {

// Finite data distribution q(x): distinct MASK-free sequences with probabilities.
class EmpiricalDataset {
 public:
  EmpiricalDataset(std::vector<TokenSeq> sequences, std::vector<double> probs)
      : sequences_(std::move(sequences)), probs_(std::move(probs)) {
    if (sequences_.empty()) throw PreconditionError("dataset is empty");
    if (sequences_.size() != probs_.size()) throw ShapeError("dataset: one probability per sequence");
    const auto& first = sequences_.front();
    double total = 0.0;
    std::set<std::vector<Token>> seen;
    for (std::size_t i = 0; i < sequences_.size(); ++i) {
      const auto& s = sequences_[i];
      if (s.size() != first.size() || s.vocab() != first.vocab()) throw ShapeError("dataset: mixed V or L");
      if (s.has_mask()) throw PreconditionError("dataset: MASK token in a clean sequence");
      if (!seen.emplace(s.tokens().begin(), s.tokens().end()).second)
        throw PreconditionError("dataset: duplicate sequence " + s.to_string());
      if (!(probs_[i] >= 0.0)) throw PreconditionError("dataset: negative probability");
      total += probs_[i];
    }
    if (std::abs(total - 1.0) > 1e-12)
      throw PreconditionError("dataset: probabilities sum to " + format_double(total) + ", not 1");
  }

  std::size_t size() const noexcept { return sequences_.size(); }
  int vocab() const noexcept { return sequences_.front().vocab(); }
  std::size_t length() const noexcept { return sequences_.front().size(); }
  const TokenSeq& sequence(std::size_t i) const { return sequences_[i]; }
  double prob(std::size_t i) const { return probs_[i]; }
  const std::vector<TokenSeq>& sequences() const noexcept { return sequences_; }
  const std::vector<double>& probs() const noexcept { return probs_; }

  double entropy() const {
    double h = 0.0;
    for (double p : probs_)
      if (p > 0.0) h -= p * std::log(p);
    return h;
  }

 private:
  std::vector<TokenSeq> sequences_;
  std::vector<double> probs_;
};

namespace detail {

// 1-based line on which each element of the top-level JSON array begins.
inline std::vector<std::size_t> record_lines(std::string_view text) {
  std::vector<std::size_t> lines;
  std::size_t line = 1;
  int depth = 0;
  bool in_string = false, escaped = false;
  for (char c : text) {
    if (c == '\n') ++line;
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') {
      in_string = true;
      continue;
    }
    if (c == '{' || c == '[') {
      if (depth == 1) lines.push_back(line);
      ++depth;
    } else if (c == '}' || c == ']') {
      --depth;
    }
  }
  return lines;
}

inline std::size_t line_of_offset(std::string_view text, std::size_t offset) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) line += text[i] == '\n';
  return line;
}

}  // namespace detail

// Parses `[{"tokens": [...], "prob": p}, ...]`. When `vocab` is 0 the
// vocabulary size is inferred as max(2, largest token + 1). Errors name the
// offending line.
inline EmpiricalDataset parse_dataset(std::string_view text, int vocab = 0) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("dataset: invalid JSON: ") + e.what(), detail::line_of_offset(text, e.byte));
  }
  if (!doc.is_array() || doc.empty()) throw FormatError("dataset: expected a non-empty JSON array", 1);
  const auto lines = detail::record_lines(text);
  auto line_at = [&](std::size_t i) { return i < lines.size() ? lines[i] : 0; };

  std::vector<std::vector<Token>> raw;
  std::vector<double> probs;
  int max_token = 1;
  std::size_t length = 0;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& rec = doc[i];
    const std::size_t line = line_at(i);
    if (!rec.is_object() || !rec.contains("tokens") || !rec.contains("prob"))
      throw FormatError("dataset: record needs \"tokens\" and \"prob\"", line);
    const auto& toks = rec["tokens"];
    if (!toks.is_array() || toks.empty()) throw FormatError("dataset: \"tokens\" must be a non-empty array", line);
    std::vector<Token> seq;
    for (const auto& t : toks) {
      if (t.is_string()) throw FormatError("dataset: MASK or non-integer token", line);
      if (!t.is_number_integer()) throw FormatError("dataset: tokens must be integers", line);
      const auto v = t.get<long long>();
      if (v < 0) throw FormatError("dataset: MASK token (negative value) in clean data", line);
      if (vocab > 0 && v >= vocab) throw FormatError("dataset: token outside vocabulary", line);
      if (v > 1 << 20) throw FormatError("dataset: token value too large", line);
      max_token = std::max(max_token, static_cast<int>(v));
      seq.push_back(static_cast<Token>(v));
    }
    if (length == 0) length = seq.size();
    if (seq.size() != length) throw FormatError("dataset: sequences differ in length", line);
    if (!rec["prob"].is_number()) throw FormatError("dataset: \"prob\" must be a number", line);
    const double p = rec["prob"].get<double>();
    if (!(p >= 0.0 && p <= 1.0)) throw FormatError("dataset: probability outside [0,1]", line);
    for (std::size_t j = 0; j < raw.size(); ++j)
      if (raw[j] == seq) throw FormatError("dataset: duplicate sequence", line);
    raw.push_back(std::move(seq));
    probs.push_back(p);
  }
  const int V = vocab > 0 ? vocab : max_token + 1;
  std::vector<TokenSeq> seqs;
  for (auto& r : raw) seqs.emplace_back(std::move(r), V);
  try {
    return EmpiricalDataset(std::move(seqs), std::move(probs));
  } catch (const std::exception& e) {
    throw FormatError(e.what());
  }
}

inline EmpiricalDataset load_dataset(const std::filesystem::path& path, int vocab = 0) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open dataset '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_dataset(ss.str(), vocab);
}

inline std::string dataset_to_json(const EmpiricalDataset& data) {
  std::string out = "[\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    out += "  {\"tokens\": [";
    const auto& s = data.sequence(i);
    for (std::size_t p = 0; p < s.size(); ++p) out += (p ? ", " : "") + std::to_string(s[p]);
    out += "], \"prob\": " + format_double(data.prob(i)) + "}";
    out += i + 1 < data.size() ? ",\n" : "\n";
  }
  return out + "]\n";
}

}  // namespace maskdiff
