#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include "json.hpp"
#include "maskdiff/dataset.hpp"
#include "maskdiff/denoiser.hpp"
#include "maskdiff/errors.hpp"
#include "maskdiff/exact_engine.hpp"
#include "maskdiff/format.hpp"
#include "maskdiff/masked_process.hpp"
#include "maskdiff/rng.hpp"
#include "maskdiff/schedules.hpp"
#include "maskdiff/weightings.hpp"

namespace maskdiff {

enum class OptimizerKind { Sgd, Adam };
enum class TimeSampling { Uniform, Stratified };

struct TrainConfig {
  WeightingSpec spec = WeightingSpec::masked(Family::Elbo);
  std::string schedule = "cosine";
  std::size_t batch_size = 64;
  std::size_t steps = 2000;
  double learning_rate = 0.05;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  std::size_t warmup_steps = 0;
  std::uint64_t seed = 0;
  std::string dataset_path;
  DenoiserKind denoiser = DenoiserKind::Tabular;
  std::size_t hidden = 16;
  std::size_t eval_every = 500;
  std::size_t eval_T = 64;
  TimeSampling time_sampling = TimeSampling::Uniform;
};

struct TraceRecord {
  std::size_t step = 0;
  double mc_loss = 0.0;
  double exact_kl = 0.0;
  double exact_elbo = 0.0;
};

struct TrainTrace {
  std::vector<TraceRecord> records;
  bool aborted = false;
  std::string abort_reason;
};

struct TrainResult {
  TrainTrace trace;
  AnyDenoiser model;
};

// ---- config I/O ----

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }
inline const char* to_string(TimeSampling s) { return s == TimeSampling::Uniform ? "uniform" : "stratified"; }

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    if (j.contains("spec")) {
      const auto& s = j.at("spec");
      if (s.is_string()) {
        c.spec = WeightingSpec::masked(parse_family(s.get<std::string>()));
      } else {
        c.spec = WeightingSpec::masked(parse_family(s.at("family").get<std::string>()), s.value("k", 0.0));
      }
    }
    c.schedule = j.value("schedule", c.schedule);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      const std::string kind = o.is_string() ? o.get<std::string>() : o.value("kind", std::string("adam"));
      if (kind == "sgd")
        c.optimizer = OptimizerKind::Sgd;
      else if (kind == "adam")
        c.optimizer = OptimizerKind::Adam;
      else
        throw PreconditionError("unknown optimizer '" + kind + "'");
      if (o.is_object()) {
        c.beta1 = o.value("beta1", c.beta1);
        c.beta2 = o.value("beta2", c.beta2);
        c.epsilon = o.value("epsilon", c.epsilon);
      }
    }
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.seed = j.value("seed", c.seed);
    c.dataset_path = j.value("dataset", c.dataset_path);
    if (j.contains("denoiser")) {
      const auto& d = j.at("denoiser");
      if (d.is_string()) {
        c.denoiser = parse_denoiser_kind(d.get<std::string>());
      } else {
        c.denoiser = parse_denoiser_kind(d.value("kind", std::string("tabular")));
        c.hidden = d.value("hidden", c.hidden);
      }
    }
    c.eval_every = j.value("eval_every", c.eval_every);
    c.eval_T = j.value("eval_T", c.eval_T);
    const std::string ts = j.value("time_sampling", std::string("uniform"));
    if (ts == "uniform")
      c.time_sampling = TimeSampling::Uniform;
    else if (ts == "stratified")
      c.time_sampling = TimeSampling::Stratified;
    else
      throw PreconditionError("unknown time_sampling '" + ts + "'");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what(), 0);
  }
  return c;
}

inline nlohmann::json config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["spec"] = {{"family", to_string(c.spec.family)}, {"k", c.spec.k}};
  j["schedule"] = c.schedule;
  j["batch_size"] = c.batch_size;
  j["steps"] = c.steps;
  j["learning_rate"] = c.learning_rate;
  j["optimizer"] = {{"kind", to_string(c.optimizer)}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"epsilon", c.epsilon}};
  j["warmup_steps"] = c.warmup_steps;
  j["seed"] = c.seed;
  j["dataset"] = c.dataset_path;
  j["denoiser"] = {{"kind", to_string(c.denoiser)}, {"hidden", c.hidden}};
  j["eval_every"] = c.eval_every;
  j["eval_T"] = c.eval_T;
  j["time_sampling"] = to_string(c.time_sampling);
  return j;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ResourceError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("config: ") + e.what(), 0);
  }
  TrainConfig c = config_from_json(j);
  // relative dataset paths resolve against the config's directory
  if (!c.dataset_path.empty() && std::filesystem::path(c.dataset_path).is_relative())
    c.dataset_path = (path.parent_path() / c.dataset_path).string();
  return c;
}

// True when the CE weight blows up approaching t = 1 (ratio test between
// 1 - 1e-8 and 1 - 1e-4). Such weightings have an estimator with unbounded
// variance even when the integral is finite.
inline bool ce_weight_diverges(const WeightingSpec& spec, const Schedule& schedule) {
  const double near = ce_weight(spec, schedule, 1.0 - 1e-8);
  const double far = ce_weight(spec, schedule, 1.0 - 1e-4);
  if (!std::isfinite(near)) return true;
  return far > 0.0 && near / far > 10.0;
}

inline void validate_config(const TrainConfig& c, const Schedule& schedule) {
  if (c.batch_size < 1) throw PreconditionError("config: batch_size must be >= 1");
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate))
    throw PreconditionError("config: learning_rate must be > 0");
  if (c.spec.side != Side::Masked) throw PreconditionError("config: training needs a masked spec");
  if (c.optimizer == OptimizerKind::Adam &&
      !(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0 && c.epsilon > 0.0))
    throw PreconditionError("config: Adam needs beta1, beta2 in [0,1) and epsilon > 0");
  if (c.eval_T < 1) throw PreconditionError("config: eval_T must be >= 1");
  if (ce_weight_diverges(c.spec, schedule))
    throw PreconditionError("config: CE weight of " + describe(c.spec) + " diverges near t=1 on schedule '" +
                            schedule.name() + "'");
}

// ---- estimators ----

struct Draw {
  double t = 0.0;
  TokenSeq z;
  std::vector<double> weights;  // CE weight on masked positions, 0 elsewhere
};

// One (t, z_t) draw for x. The stream consumed is: t (unless given), then one
// uniform per position.
inline Draw draw_weighted(const TokenSeq& x, const WeightingSpec& spec, const Schedule& schedule, Rng& rng,
                          std::optional<double> fixed_t = std::nullopt) {
  Draw d;
  d.t = fixed_t ? *fixed_t : rng.uniform();
  d.z = sample_zt(schedule, d.t, x, rng);
  d.weights.assign(x.size(), 0.0);
  if (d.z.has_mask()) {
    const double w = ce_weight(spec, schedule, d.t);
    for (std::size_t p = 0; p < x.size(); ++p)
      if (d.z.is_masked(p)) d.weights[p] = w;
  }
  return d;
}

namespace detail {

inline void check_batch(std::span<const TokenSeq> batch) {
  if (batch.empty()) throw PreconditionError("empty batch");
}

inline void accumulate(Gradient& into, const Gradient& g) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += g[i];
}

}  // namespace detail

// Batch average of ce_weight(t) * sum over masked positions of -log mu[x_p],
// with t ~ U(0,1) per element (or the shared `fixed_t`).
template <Denoiser D>
LossGrad mc_loss(std::span<const TokenSeq> batch, const D& den, const WeightingSpec& spec, const Schedule& schedule,
                 Rng& rng, std::optional<double> fixed_t = std::nullopt) {
  detail::check_batch(batch);
  LossGrad out{0.0, Gradient(den.num_params(), 0.0)};
  for (const auto& x : batch) {
    const Draw d = draw_weighted(x, spec, schedule, rng, fixed_t);
    if (!d.z.has_mask()) continue;
    const LossGrad lg = den.loss_and_grad(d.z, x, d.weights);
    out.loss += lg.loss;
    detail::accumulate(out.grad, lg.grad);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  for (double& g : out.grad) g *= inv;
  return out;
}

struct SimpleBatchLoss : LossGrad {
  std::size_t masks = 0;
};

// Summed masked cross-entropy divided by the batch's total mask count. Draws
// are taken in the same order as mc_loss, so both see identical (t, z_t) for
// the same rng state.
template <Denoiser D>
SimpleBatchLoss simple_batch_loss(std::span<const TokenSeq> batch, const D& den, const Schedule& schedule, Rng& rng,
                                  std::optional<double> fixed_t = std::nullopt) {
  detail::check_batch(batch);
  SimpleBatchLoss out;
  out.grad.assign(den.num_params(), 0.0);
  const WeightingSpec unit = WeightingSpec::masked(Family::Simple);
  for (const auto& x : batch) {
    const Draw d = draw_weighted(x, unit, schedule, rng, fixed_t);
    const std::size_t k = d.z.mask_count();
    if (k == 0) continue;
    out.masks += k;
    const LossGrad lg = den.loss_and_grad(d.z, x, d.weights);
    out.loss += lg.loss;
    detail::accumulate(out.grad, lg.grad);
  }
  if (out.masks == 0) return out;
  const double inv = 1.0 / static_cast<double>(out.masks);
  out.loss *= inv;
  for (double& g : out.grad) g *= inv;
  return out;
}

// L * int_0^1 (1 - alpha_t) dt
inline double expected_mask_count(const Schedule& schedule, std::size_t L) {
  boost::math::quadrature::tanh_sinh<double> integrator;
  const double p = integrator.integrate([&](double t) { return schedule.mask_prob(std::clamp(t, 0.0, 1.0)); }, 0.0,
                                        1.0, 1e-13);
  return static_cast<double>(L) * p;
}

// ---- optimisation ----

class Optimizer {
 public:
  Optimizer(const TrainConfig& c, std::size_t n) : c_(c), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, const Gradient& g) {
    ++t_;
    double lr = c_.learning_rate;
    if (c_.warmup_steps > 0) lr *= std::min(1.0, static_cast<double>(t_) / static_cast<double>(c_.warmup_steps));
    if (c_.optimizer == OptimizerKind::Sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * g[i];
      return;
    }
    const double c1 = 1.0 - std::pow(c_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(c_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = c_.beta1 * m_[i] + (1.0 - c_.beta1) * g[i];
      v_[i] = c_.beta2 * v_[i] + (1.0 - c_.beta2) * g[i] * g[i];
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + c_.epsilon);
    }
  }

 private:
  TrainConfig c_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

namespace detail {

inline std::vector<TokenSeq> draw_batch(const EmpiricalDataset& data, std::size_t n, Rng& rng) {
  std::vector<double> cdf(data.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < data.size(); ++k) cdf[k] = acc += data.prob(k);
  std::vector<TokenSeq> out;
  out.reserve(n);
  for (std::size_t b = 0; b < n; ++b) {
    const double u = rng.uniform() * acc;
    std::size_t k = std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin();
    out.push_back(data.sequence(std::min(k, data.size() - 1)));
  }
  return out;
}

template <Denoiser D>
void evaluate(TraceRecord& r, const D& den, const EmpiricalDataset& data, const Schedule& schedule, std::size_t T) {
  const StateSpace space(den.vocab(), den.length());
  const ExactBudget budget;
  if (space.size() > budget.max_states || T > budget.max_steps) {
    r.exact_kl = r.exact_elbo = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  const PredictionTable table(den, budget);
  const TimeGrid grid(T);
  r.exact_kl = exact_data_model_kl(data, table, schedule, grid, budget);
  r.exact_elbo = exact_average_elbo(data, table, schedule, grid);
}

}  // namespace detail

// Deterministic given the config: step n draws from substream n of the seed.
// Records step 0 (before any update), every eval_every steps, and the last step.
inline TrainResult train(const TrainConfig& config, const EmpiricalDataset& data) {
  const Schedule schedule = ScheduleRegistry::with_defaults().get(config.schedule);
  validate_config(config, schedule);
  TrainResult res{{}, init(config.denoiser, {data.vocab(), data.length(), config.hidden}, config.seed)};
  AnyDenoiser& den = res.model;
  Optimizer opt(config, den.num_params());
  const Rng root(config.seed, 0x747261696e);
  // golden-ratio sequence for the shared time in stratified mode
  const double phase = Rng(config.seed, 0x7068617365).uniform();
  auto shared_t = [&](std::size_t n) -> std::optional<double> {
    if (config.time_sampling != TimeSampling::Stratified) return std::nullopt;
    double t = std::fmod(phase + 0.6180339887498949 * static_cast<double>(n), 1.0);
    return t > 0.0 ? t : 0.5;
  };

  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  {
    Rng rng = root.split(0);
    const auto batch = detail::draw_batch(data, config.batch_size, rng);
    TraceRecord r;
    r.mc_loss = mc_loss(std::span<const TokenSeq>(batch), den, config.spec, schedule, rng, shared_t(0)).loss;
    detail::evaluate(r, den, data, schedule, config.eval_T);
    res.trace.records.push_back(r);
  }
  for (std::size_t n = 1; n <= config.steps; ++n) {
    Rng rng = root.split(n);
    const auto batch = detail::draw_batch(data, config.batch_size, rng);
    const LossGrad lg = mc_loss(std::span<const TokenSeq>(batch), den, config.spec, schedule, rng, shared_t(n));
    bool finite = std::isfinite(lg.loss);
    for (double g : lg.grad) finite = finite && std::isfinite(g);
    if (!finite) {
      res.trace.aborted = true;
      res.trace.abort_reason = "non-finite loss at step " + std::to_string(n);
      return res;
    }
    opt.step(den.params(), lg.grad);
    if (!std::all_of(den.params().begin(), den.params().end(), [](double v) { return std::isfinite(v); })) {
      res.trace.aborted = true;
      res.trace.abort_reason = "non-finite parameters at step " + std::to_string(n);
      return res;
    }
    loss_sum += lg.loss;
    ++loss_count;
    if ((config.eval_every > 0 && n % config.eval_every == 0) || n == config.steps) {
      TraceRecord r;
      r.step = n;
      r.mc_loss = loss_sum / static_cast<double>(loss_count);
      loss_sum = 0.0;
      loss_count = 0;
      detail::evaluate(r, den, data, schedule, config.eval_T);
      res.trace.records.push_back(r);
    }
  }
  return res;
}

inline TrainResult train(const TrainConfig& config) {
  if (config.dataset_path.empty()) throw PreconditionError("config: no dataset path");
  return train(config, load_dataset(config.dataset_path));
}

inline void write_trace_csv(std::ostream& os, const TrainTrace& trace) {
  os << "step,mc_loss,exact_kl,exact_elbo\n";
  for (const auto& r : trace.records)
    os << r.step << ',' << format_double(r.mc_loss) << ',' << format_double(r.exact_kl) << ','
       << format_double(r.exact_elbo) << '\n';
}

// ---- weighting comparison ----

struct ComparisonRow {
  std::string label;
  double final_kl = 0.0;
  double final_elbo = 0.0;  // exact average ELBO (unweighted)
  bool monotone = false;
  double min_increment = 0.0;  // smallest implied increment w(t_i) - w(t_{i-1}) on the eval grid
  std::vector<double> kl_profile;  // average KL term mass per time bucket
  bool aborted = false;
};

// E_q(x) of the KL terms of the unweighted ELBO, summed into `buckets` equal
// slices of [0,1].
template <class D>
std::vector<double> kl_profile(const D& den, const EmpiricalDataset& data, const Schedule& schedule,
                               const TimeGrid& grid, std::size_t buckets) {
  const auto& table = detail::as_table(den);
  std::vector<double> out(buckets, 0.0);
  for (std::size_t k = 0; k < data.size(); ++k) {
    const ElboBreakdown e = elbo_discrete(data.sequence(k), table, schedule, grid);
    for (std::size_t j = 1; j <= grid.steps; ++j) {
      const std::size_t b = std::min(buckets - 1, (j - 1) * buckets / grid.steps);
      out[b] += data.prob(k) * e.kl_terms[j - 1];
    }
  }
  return out;
}

inline std::vector<ComparisonRow> compare_weightings(const std::vector<TrainConfig>& configs,
                                                     const EmpiricalDataset& data, std::size_t buckets = 4) {
  std::vector<ComparisonRow> rows;
  for (const auto& c : configs) {
    const Schedule schedule = ScheduleRegistry::with_defaults().get(c.schedule);
    const TrainResult r = train(c, data);
    ComparisonRow row;
    row.label = describe(c.spec);
    row.aborted = r.trace.aborted;
    row.final_kl = r.trace.records.back().exact_kl;
    row.final_elbo = r.trace.records.back().exact_elbo;
    row.monotone = check_monotone(c.spec, schedule, default_monotone_grid()).monotone;
    const auto inc = implied_increments(c.spec, schedule, c.eval_T);
    row.min_increment = inc.empty() ? 0.0 : *std::min_element(inc.begin(), inc.end());
    const StateSpace space(data.vocab(), data.length());
    if (space.size() <= ExactBudget{}.max_states)
      row.kl_profile = kl_profile(PredictionTable(r.model), data, schedule, TimeGrid(c.eval_T), buckets);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace maskdiff
