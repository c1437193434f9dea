#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "maskdiff/checkpoint.hpp"
#include "maskdiff/dataset.hpp"

using namespace maskdiff;

namespace {
int error_line(const std::string& text) {
  try {
    parse_dataset(text);
  } catch (const FormatError& e) {
    return static_cast<int>(e.line());
  }
  return -1;
}
}  // namespace

TEST(Dataset, ParsesAndInfersVocab) {
  const auto d = parse_dataset(R"([
  {"tokens": [0, 2], "prob": 0.25},
  {"tokens": [1, 1], "prob": 0.75}
])");
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.vocab(), 3);
  EXPECT_EQ(d.length(), 2u);
  EXPECT_EQ(d.sequence(1), TokenSeq({1, 1}, 3));
  EXPECT_NEAR(d.entropy(), -(0.25 * std::log(0.25) + 0.75 * std::log(0.75)), 1e-15);
  EXPECT_EQ(parse_dataset(R"([{"tokens": [0, 0], "prob": 1}])").vocab(), 2);
  EXPECT_EQ(parse_dataset(R"([{"tokens": [0, 0], "prob": 1}])", 5).vocab(), 5);
}

TEST(Dataset, ErrorsNameTheLine) {
  EXPECT_EQ(error_line("[\n{\"tokens\": [0], \"prob\": 0.5},\n{\"tokens\": [-1], \"prob\": 0.5}\n]"), 3);
  EXPECT_EQ(error_line("[\n{\"tokens\": [0], \"prob\": 0.5},\n\n{\"tokens\": [\"m\"], \"prob\": 0.5}\n]"), 4);
  EXPECT_EQ(error_line("[\n{\"tokens\": [0, 1], \"prob\": 0.5},\n{\"tokens\": [1], \"prob\": 0.5}\n]"), 3);
  EXPECT_EQ(error_line("[\n{\"tokens\": [0], \"prob\": 0.5},\n{\"tokens\": [0], \"prob\": 0.5}\n]"), 3);
  EXPECT_EQ(error_line("[\n{\"tokens\": [0.5], \"prob\": 1}\n]"), 2);
  EXPECT_EQ(error_line("[\n{\"tokens\": [0], \"prob\": 1.5}\n]"), 2);
  EXPECT_EQ(error_line("[\n{\"tokens\": [0], \"prob\": 1},\n  oops\n]"), 3);
}

TEST(Dataset, ProbabilitySum) {
  EXPECT_THROW(parse_dataset(R"([{"tokens": [0], "prob": 0.49}, {"tokens": [1], "prob": 0.49}])"), FormatError);
  EXPECT_THROW(EmpiricalDataset({TokenSeq({0}, 2)}, {0.98}), PreconditionError);
  EXPECT_THROW(EmpiricalDataset({TokenSeq({kMask}, 2)}, {1.0}), PreconditionError);
}

TEST(Dataset, RoundTrip) {
  const auto d = parse_dataset(R"([{"tokens": [0, 1, 1], "prob": 0.125}, {"tokens": [1, 0, 0], "prob": 0.875}])");
  const auto e = parse_dataset(dataset_to_json(d));
  ASSERT_EQ(e.size(), d.size());
  for (std::size_t k = 0; k < d.size(); ++k) {
    EXPECT_EQ(e.sequence(k), d.sequence(k));
    EXPECT_EQ(e.prob(k), d.prob(k));
  }
}

TEST(Dataset, MissingFile) { EXPECT_THROW(load_dataset("/nonexistent/file.json"), FormatError); }

TEST(Checkpoint, RoundTripBothKinds) {
  for (auto kind : {DenoiserKind::Tabular, DenoiserKind::Mlp}) {
    AnyDenoiser den = init(kind, {3, 2, 5}, 42);
    Rng rng(1, 1);
    for (double& p : den.params()) p = rng.normal();
    den.params()[0] = -0.0;
    std::stringstream ss;
    write_checkpoint(ss, den);
    const AnyDenoiser back = read_checkpoint(ss);
    EXPECT_EQ(back.kind(), kind);
    EXPECT_EQ(back.seed(), 42u);
    ASSERT_EQ(back.num_params(), den.num_params());
    for (std::size_t i = 0; i < den.num_params(); ++i)
      EXPECT_EQ(std::bit_cast<std::uint64_t>(back.params()[i]), std::bit_cast<std::uint64_t>(den.params()[i]));
  }
}

TEST(Checkpoint, Corrupt) {
  std::stringstream trunc;
  write_checkpoint(trunc, init(DenoiserKind::Tabular, {2, 2, 0}, 0));
  std::string bytes = trunc.str();
  bytes.resize(bytes.size() - 3);
  std::stringstream in(bytes);
  EXPECT_THROW(read_checkpoint(in), FormatError);
  std::stringstream junk("not json\n");
  EXPECT_THROW(read_checkpoint(junk), FormatError);
  std::stringstream wrong(R"({"kind":"tabular","vocab":2,"length":2,"hidden":0,"seed":0,"count":3})" "\n");
  EXPECT_THROW(read_checkpoint(wrong), FormatError);
}
