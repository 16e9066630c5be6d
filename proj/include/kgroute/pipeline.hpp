#pragma once

// Subcommand bodies. Every step reads its inputs from the run directory,
// writes its outputs there and never modifies its inputs.
//
//   corpus.jsonl  pool.json  vocabulary.json      ingest | simulate
//   profiles.json                                 simulate
//   answers.full.jsonl  labels.jsonl              simulate | label
//   model/params.bin  model/state.bin  model/history.jsonl   train
//   routes.jsonl                                  route
//   salience.jsonl  retrieved.jsonl  reports/retrieval.*     retrieve
//   answers.retrieved.jsonl                       answer --context retrieved
//   predictions.<ctx>.jsonl  traces.<ctx>.jsonl   vote
//   reports/eval.*  reports/sweep_<grid>.*        eval | sweep

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kgroute/config.hpp"
#include "kgroute/ensemble.hpp"
#include "kgroute/gradcheck.hpp"
#include "kgroute/metrics.hpp"
#include "kgroute/saliency.hpp"

namespace kgroute {

class Run {
 public:
  // Creates the run directory and writes config.resolved.json.
  Run(RunConfig config, std::ostream& log);

  const RunConfig& config() const noexcept { return config_; }
  const std::string& dir() const noexcept { return dir_; }
  std::string path(const std::string& rel) const;
  std::ostream& log() const { return log_; }

  // Throws MissingArtifactError naming the subcommand that writes `rel`;
  // alternatives in `producer` are separated by '|'.
  std::string require(const std::string& rel, const std::string& producer) const;

 private:
  RunConfig config_;
  std::string dir_;
  std::ostream& log_;
};

struct SimulateSummary {
  std::size_t queries = 0;
  std::size_t agents = 0;
  std::map<std::string, std::string> experts;
};
SimulateSummary run_simulate(const Run& run);

std::size_t run_ingest(const Run& run);

// Answers every query on its full graph (or imports paths.answers) and
// writes the F1 labels.
std::size_t run_label(const Run& run);

struct TrainSummary {
  int epochs = 0;
  int best_epoch = 0;
  double best_val = 0.0;
  double seconds = 0.0;
  std::vector<EpochMetrics> history;
};
// `resume` continues from model/state.bin when it exists.
TrainSummary run_train(const Run& run, bool resume = false, std::optional<int> stop_after = std::nullopt);

std::vector<RouteDistribution> run_route(const Run& run);

struct RetrieveSummary {
  RetrievalReport report;
  std::vector<std::string> warnings;
  SalienceMode mode = SalienceMode::kOracle;
};
RetrieveSummary run_retrieve(const Run& run);

// context: "full" or "retrieved". Only the evaluation split is answered.
std::size_t run_answer(const Run& run, const std::string& context);

// Weighted vote of the routed distribution over answers.<context>.jsonl.
std::size_t run_vote(const Run& run, const std::string& context);

struct EvalSummary {
  std::vector<MethodRow> rows;
  std::string table;
  OracleResult per_setting;
  OracleResult per_query;
};
EvalSummary run_eval(const Run& run);

struct SweepPoint {
  std::string label;
  double f1 = 0.0;  // percent, all-queries mean
};
// grid: "k", "layers" or "hidden". Layer/hidden points retrain in
// sweep/<grid>-<value>/.
std::vector<SweepPoint> run_sweep(const Run& run, const std::string& grid);

// The default check case (12 nodes, d=8, H=16, L=2, 3 relations, 4 agents).
GradCheckReport run_gradcheck(std::uint64_t seed, std::optional<ad::Op> corrupt);

// Helpers shared with tests.
std::string write_pool_json(const std::vector<AgentSpec>& pool);
std::vector<AgentSpec> read_pool_json(const std::string& text);

}  // namespace kgroute
