// kgroute command line. Exit codes: 0 ok, 1 other failure, 2 configuration,
// 3 data (malformed or missing inputs), 4 compute (divergence, failed
// gradient check).

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "kgroute/config.hpp"
#include "kgroute/error.hpp"
#include "kgroute/pipeline.hpp"

namespace {

using namespace kgroute;

constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitCompute = 4;

struct Overrides {
  std::string config;
  std::string run_dir;
  std::optional<std::uint64_t> seed;
  std::optional<double> tau;
  std::optional<std::size_t> topk;
  std::optional<double> temperature;
  std::optional<std::size_t> jobs;
};

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
  if (o.seed) apply_seed(c, *o.seed);
  if (o.tau) c.retrieval.retrieval.tau = *o.tau;
  if (o.topk) c.vote.k = *o.topk;
  if (o.temperature) c.train.temperature = *o.temperature;
  if (o.jobs) c.jobs = *o.jobs;
  if (!o.run_dir.empty()) c.paths.run_dir = o.run_dir;
  c.validate();
  return c;
}

std::optional<ad::Op> parse_op(const std::string& name) {
  if (name.empty()) return std::nullopt;
  for (int i = 0; i <= static_cast<int>(ad::Op::kHalfSumSquares); ++i) {
    const auto op = static_cast<ad::Op>(i);
    if (ad::to_string(op) == name) return op;
  }
  throw ConfigError("unknown op '" + name + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-based agent routing: simulate, label, train, route, retrieve, answer, vote, eval"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("-c,--config", o.config, "Run config (JSON)");
  app.add_option("--run-dir", o.run_dir, "Run directory (default: <run_root>/<config hash>)");
  app.add_option("--seed", o.seed, "Global seed");
  app.add_option("--tau", o.tau, "Salience threshold");
  app.add_option("--topk", o.topk, "Agents kept by the vote");
  app.add_option("--temperature", o.temperature, "Target distribution temperature");
  app.add_option("--jobs", o.jobs, "Worker cap");

  auto* simulate = app.add_subcommand("simulate", "Generate the synthetic scenario, its answers and labels");
  auto* ingest = app.add_subcommand("ingest", "Validate and import paths.corpus and paths.pool");
  auto* label = app.add_subcommand("label", "Answer every query on its full graph and write F1 labels");
  auto* train = app.add_subcommand("train", "Train the router");
  bool resume = false;
  std::optional<int> stop_after;
  train->add_flag("--resume", resume, "Continue from model/state.bin");
  train->add_option("--stop-after", stop_after, "Stop once this many epochs are complete");
  auto* route = app.add_subcommand("route", "Write routing distributions for the evaluation split");
  auto* retrieve = app.add_subcommand("retrieve", "Salience, retrieved subgraphs and the retrieval report");
  std::string context = "full";
  auto* answer = app.add_subcommand("answer", "Run the agents on full or retrieved graphs");
  answer->add_option("--context", context, "full or retrieved")->check(CLI::IsMember({"full", "retrieved"}));
  auto* vote = app.add_subcommand("vote", "Weighted vote over the routed agents");
  vote->add_option("--context", context, "full or retrieved")->check(CLI::IsMember({"full", "retrieved"}));
  auto* eval = app.add_subcommand("eval", "Comparison table against the baselines");
  auto* sweep = app.add_subcommand("sweep", "k, layer or hidden-size sweep");
  std::string grid = "k";
  sweep->add_option("--grid", grid, "k, layers or hidden")->check(CLI::IsMember({"k", "layers", "hidden"}));
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the router gradients");
  std::uint64_t gc_seed = 1;
  double tolerance = 1e-5;
  std::string corrupt;
  gradcheck->add_option("--case-seed", gc_seed, "Seed of the random check case");
  gradcheck->add_option("--tolerance", tolerance, "Maximum relative error");
  gradcheck->add_option("--corrupt", corrupt, "Scale the adjoint of this op (mutation test)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (gradcheck->parsed()) {
      const auto r = run_gradcheck(gc_seed, parse_op(corrupt));
      std::printf("checked %zu coordinates, max rel error %.3e at %s (analytic %.6e, numeric %.6e), %.2fs\n",
                  r.checked, r.max_rel_error, r.worst_location.c_str(), r.worst_analytic, r.worst_numeric,
                  r.seconds);
      if (!r.passed(tolerance)) {
        std::fprintf(stderr, "gradient check failed: %.3e >= %.1e\n", r.max_rel_error, tolerance);
        return kExitCompute;
      }
      return 0;
    }
    const Run run(resolve(o), std::cout);
    std::cout << "run directory: " << run.dir() << "\n";
    if (simulate->parsed()) run_simulate(run);
    if (ingest->parsed()) run_ingest(run);
    if (label->parsed()) run_label(run);
    if (train->parsed()) run_train(run, resume, stop_after);
    if (route->parsed()) run_route(run);
    if (retrieve->parsed()) run_retrieve(run);
    if (answer->parsed()) run_answer(run, context);
    if (vote->parsed()) run_vote(run, context);
    if (eval->parsed()) run_eval(run);
    if (sweep->parsed()) run_sweep(run, grid);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return kExitData;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitData;
  } catch (const ValidationError& e) {
    std::cerr << "invalid data: " << e.what() << "\n";
    return kExitData;
  } catch (const UnsupportedSchemaError& e) {
    std::cerr << "unsupported schema: " << e.what() << "\n";
    return kExitData;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitCompute;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
}
