#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "maskdiff/maskdiff.hpp"

namespace fs = std::filesystem;
using namespace maskdiff;
using json = nlohmann::ordered_json;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("no such file: " + path);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot write " + path);
  return os;
}

std::string num(double v) { return format_double(v); }

// ---- verify ----

struct VerifyArgs {
  std::string suite = "all";
  verify::Options opt;
  bool json = false;
};

int run_verify(const VerifyArgs& a) {
  std::vector<std::string> suites;
  if (a.suite == "all")
    suites = verify::suite_names();
  else
    suites.push_back(a.suite);
  bool ok = true;
  json out;
  out["seed"] = a.opt.seed;
  out["suites"] = json::array();
  for (const auto& name : suites) {
    const auto report = verify::run_suite(name, a.opt);
    ok = ok && report.passed();
    if (a.json) {
      out["suites"].push_back(verify::to_json(report));
      continue;
    }
    std::cout << name << ": " << report.pass_count() << "/" << report.checks.size() << " passed\n";
    for (const auto& c : report.checks)
      std::cout << "  [" << (c.passed ? "ok" : "FAIL") << "] " << c.name << ": " << num(c.value)
                << " (tol " << num(c.tolerance) << ")\n";
  }
  if (a.json) {
    out["passed"] = ok;
    std::cout << out.dump(2) << '\n';
  }
  return ok ? kOk : kCheckFailed;
}

// ---- curves ----

struct CurvesArgs {
  std::string family = "elbo";
  double k = 0.0;
  std::string side = "masked";
  std::string schedule = "cosine";
  std::size_t points = 999;
  double lo = 0.001;
  double hi = 0.999;
  bool normalize = false;
  std::string out;
};

int run_curves(const CurvesArgs& a) {
  const Family f = parse_family(a.family);
  const WeightingSpec spec = a.side == "gaussian" ? WeightingSpec::gaussian(f, a.k) : WeightingSpec::masked(f, a.k);
  const Schedule schedule = ScheduleRegistry::with_defaults().get(a.schedule);
  const CurveTable table = emit_curves(spec, schedule, uniform_grid(a.points, a.lo, a.hi), a.normalize);
  if (a.out.empty() || a.out == "-") {
    write_csv(std::cout, table);
  } else {
    auto os = open_out(a.out);
    write_csv(os, table);
  }
  return kOk;
}

// ---- train ----

struct TrainArgs {
  std::string config;
  std::string checkpoint;
  std::string trace;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  bool json = false;
};

int run_train(const TrainArgs& a) {
  require_file(a.config);
  TrainConfig c = load_config(a.config);
  if (a.seed) c.seed = *a.seed;
  if (a.steps) c.steps = *a.steps;
  if (c.dataset_path.empty()) throw UsageError("config has no dataset");
  require_file(c.dataset_path);
  const EmpiricalDataset data = load_dataset(c.dataset_path);
  const TrainResult r = train(c, data);
  if (!a.checkpoint.empty()) save_checkpoint(a.checkpoint, r.model);
  if (!a.trace.empty()) {
    auto os = open_out(a.trace);
    write_trace_csv(os, r.trace);
  }
  const auto& last = r.trace.records.back();
  if (a.json) {
    json out;
    out["config"] = config_to_json(c);
    out["aborted"] = r.trace.aborted;
    if (r.trace.aborted) out["abort_reason"] = r.trace.abort_reason;
    out["trace"] = json::array();
    for (const auto& rec : r.trace.records)
      out["trace"].push_back({{"step", rec.step}, {"mc_loss", num(rec.mc_loss)}, {"exact_kl", num(rec.exact_kl)},
                              {"exact_elbo", num(rec.exact_elbo)}});
    std::cout << out.dump(2) << '\n';
  } else {
    write_trace_csv(std::cout, r.trace);
    if (r.trace.aborted) std::cout << "aborted: " << r.trace.abort_reason << '\n';
    std::cout << "final exact KL " << num(last.exact_kl) << ", exact ELBO " << num(last.exact_elbo) << '\n';
  }
  return r.trace.aborted ? kCheckFailed : kOk;
}

// ---- sample ----

struct SampleArgs {
  std::string checkpoint;
  std::string schedule = "cosine";
  std::size_t steps = 16;
  std::size_t n = 100;
  std::uint64_t seed = 0;
  std::string out;
};

int run_sample(const SampleArgs& a) {
  require_file(a.checkpoint);
  const AnyDenoiser den = load_checkpoint(a.checkpoint);
  const Schedule schedule = ScheduleRegistry::with_defaults().get(a.schedule);
  const SampleBatch batch = sample_batch(den, schedule, a.steps, a.n, a.seed);
  auto write = [&](std::ostream& os) {
    for (const auto& s : batch.samples) {
      json line;
      line["tokens"] = std::vector<int>(s.tokens().begin(), s.tokens().end());
      os << line.dump() << '\n';
    }
  };
  if (a.out.empty() || a.out == "-") {
    write(std::cout);
  } else {
    auto os = open_out(a.out);
    write(os);
  }
  return kOk;
}

// ---- eval ----

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string schedule = "cosine";
  std::size_t steps = 64;
  bool json = false;
};

int run_eval(const EvalArgs& a) {
  require_file(a.checkpoint);
  require_file(a.dataset);
  const AnyDenoiser den = load_checkpoint(a.checkpoint);
  const EmpiricalDataset data = load_dataset(a.dataset, den.vocab());
  if (data.length() != den.length()) throw UsageError("dataset length does not match the checkpoint");
  const Schedule schedule = ScheduleRegistry::with_defaults().get(a.schedule);
  const TimeGrid grid(a.steps);
  const PredictionTable table(den);
  const auto model = exact_model_marginal(table, schedule, grid);
  std::vector<double> q(model.size(), 0.0);
  for (std::size_t k = 0; k < data.size(); ++k) q[table.space().encode_clean(data.sequence(k))] = data.prob(k);
  const double kl = data_kl(data, table.space(), model);
  const double elbo = exact_average_elbo(data, table, schedule, grid);
  const double tv = tv_distance(q, model);
  if (a.json) {
    json out{{"steps", a.steps}, {"schedule", schedule.name()}, {"exact_elbo", num(elbo)},
             {"exact_kl", num(kl)},  {"tv", num(tv)},             {"data_entropy", num(data.entropy())}};
    std::cout << out.dump(2) << '\n';
  } else {
    std::cout << "exact ELBO (avg)  " << num(elbo) << '\n'
              << "exact KL(q||p)    " << num(kl) << '\n'
              << "TV(q, p)          " << num(tv) << '\n'
              << "data entropy      " << num(data.entropy()) << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked diffusion objectives: verification, weighting curves, toy training and sampling"};
  app.require_subcommand(1, 1);

  VerifyArgs va;
  auto* verify_cmd = app.add_subcommand("verify", "run self-checks against independent oracles");
  verify_cmd->add_option("suite", va.suite, "schedules|kernels|theorem1|theorem2|gaussian|all")
      ->check(CLI::IsMember({"schedules", "kernels", "theorem1", "theorem2", "gaussian", "all"}));
  verify_cmd->add_option("--seed", va.opt.seed, "random seed");
  verify_cmd->add_option("--trials", va.opt.trials, "random instances for the theorem suites");
  verify_cmd->add_option("--V", va.opt.vocab, "vocabulary size")->check(CLI::Range(2, 16));
  verify_cmd->add_option("--L", va.opt.length, "sequence length")->check(CLI::Range(1, 8));
  verify_cmd->add_option("--T", va.opt.steps, "discretisation steps")->check(CLI::Range(1, 64));
  verify_cmd->add_flag("--json", va.json, "machine-readable report");

  CurvesArgs ca;
  auto* curves_cmd = app.add_subcommand("curves", "tabulate a weighting function as CSV");
  curves_cmd->add_option("--spec", ca.family, "elbo|edm|iddpm|sigmoid|fm|simple");
  curves_cmd->add_option("--k", ca.k, "sigmoid shift");
  curves_cmd->add_option("--side", ca.side, "masked|gaussian")->check(CLI::IsMember({"masked", "gaussian"}));
  curves_cmd->add_option("--schedule", ca.schedule, "cosine|linear|custom:<name>");
  curves_cmd->add_option("--points", ca.points, "grid size");
  curves_cmd->add_option("--lo", ca.lo, "first grid point");
  curves_cmd->add_option("--hi", ca.hi, "last grid point");
  curves_cmd->add_flag("--normalize", ca.normalize, "divide each column by its maximum");
  curves_cmd->add_option("--out", ca.out, "output CSV (default stdout)");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a denoiser from a JSON config");
  train_cmd->add_option("config", ta.config, "config path")->required();
  train_cmd->add_option("--checkpoint", ta.checkpoint, "write the trained model here");
  train_cmd->add_option("--trace", ta.trace, "write the trace CSV here");
  train_cmd->add_option("--seed", ta.seed, "override the config seed");
  train_cmd->add_option("--steps", ta.steps, "override the step count");
  train_cmd->add_flag("--json", ta.json, "machine-readable report");

  SampleArgs sa;
  auto* sample_cmd = app.add_subcommand("sample", "ancestral sampling from a checkpoint (JSON lines)");
  sample_cmd->add_option("checkpoint", sa.checkpoint, "checkpoint path")->required();
  sample_cmd->add_option("--schedule", sa.schedule, "masking schedule");
  sample_cmd->add_option("--T", sa.steps, "reverse steps")->check(CLI::PositiveNumber);
  sample_cmd->add_option("--n", sa.n, "number of samples");
  sample_cmd->add_option("--seed", sa.seed, "random seed");
  sample_cmd->add_option("--out", sa.out, "output file (default stdout)");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "exact ELBO, KL and TV of a checkpoint against a dataset");
  eval_cmd->add_option("checkpoint", ea.checkpoint, "checkpoint path")->required();
  eval_cmd->add_option("dataset", ea.dataset, "dataset JSON")->required();
  eval_cmd->add_option("--schedule", ea.schedule, "masking schedule");
  eval_cmd->add_option("--T", ea.steps, "discretisation steps")->check(CLI::PositiveNumber);
  eval_cmd->add_flag("--json", ea.json, "machine-readable report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*verify_cmd) return run_verify(va);
    if (*curves_cmd) return run_curves(ca);
    if (*train_cmd) return run_train(ta);
    if (*sample_cmd) return run_sample(sa);
    if (*eval_cmd) return run_eval(ea);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const UnsupportedError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kCheckFailed;
  }
  return kUsage;
}
