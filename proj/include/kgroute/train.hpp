#pragma once

// Router training: soft targets from per-agent F1, KL objective, Adam with
// global-norm clipping, early stopping on validation KL and resumable state.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kgroute/hgnn.hpp"
#include "kgroute/labels.hpp"

namespace kgroute {

// softmax(f1 / temperature). Throws ContractError on an empty vector or a
// non-positive temperature.
std::vector<double> target_distribution(const std::vector<double>& f1, double temperature);

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 200;
  double temperature = 0.1;
  std::uint64_t seed = 13;
  int patience = 20;  // epochs without validation improvement; 0 disables
  double clip = 5.0;  // global gradient norm; 0 disables

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct Example {
  std::string query_id;
  GraphPlan plan;
  ad::Tensor embeddings;
  std::vector<std::string> agents;  // plan agent order
  std::vector<double> f1;
  std::vector<double> target;
};

// Pairs each routed graph with its embeddings and F1 labels. Throws
// ValidationError when a label is missing.
Example make_example(const RoutedGraph& g, ad::Tensor embeddings, const PerformanceRecord& perf,
                     double temperature);

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double train_kl = 0.0;
  double val_kl = 0.0;
  double train_top1 = 0.0;  // fraction
  double val_top1 = 0.0;
  double seconds = 0.0;     // wall time; not part of checkpoints

  nlohmann::json to_json() const;
};

struct AdamState {
  std::int64_t step = 0;
  std::map<std::string, ad::Tensor> m;
  std::map<std::string, ad::Tensor> v;
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// Everything needed to continue a run bit-for-bit.
struct TrainState {
  TrainConfig config;
  ParamStore params;
  ParamStore best;
  AdamState adam;
  int epoch = 0;  // completed epochs
  int best_epoch = 0;
  double best_val = 0.0;
  int bad_epochs = 0;
  bool finished = false;
  std::string rng;
  std::vector<EpochMetrics> history;
};

TrainState initial_state(const ParamStore& params, const TrainConfig& config);

void save_train_state(const std::string& path, const TrainState& state);
TrainState load_train_state(const std::string& path);

struct TrainHooks {
  std::function<void(const EpochMetrics&)> on_epoch;
  // Written after every epoch when non-empty.
  std::string checkpoint_path;
  // Stop (unfinished) once this many epochs are complete.
  std::optional<int> stop_after;
};

// Runs epochs until the budget, patience or stop_after is exhausted.
// Without validation examples the training KL drives early stopping.
// Throws DivergenceError naming the query on a non-finite loss.
void train(TrainState& state, const std::vector<Example>& train_set, const std::vector<Example>& val_set,
           const TrainHooks& hooks = {});

// One Adam step on a single example; returns the loss. Exposed for tests.
double train_step(TrainState& state, const Example& ex);

struct RouterEval {
  double mean_kl = 0.0;
  double top1 = 0.0;         // fraction of argmax agreement with the target
  double expected_f1 = 0.0;  // mean of sum_a p(a) F1(a)
};

RouterEval evaluate_router(const ParamStore& params, const std::vector<Example>& examples);

}  // namespace kgroute
