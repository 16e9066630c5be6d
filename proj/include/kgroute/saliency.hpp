#pragma once

// Gradient-norm entity salience, thresholded retrieval of the induced
// subgraph, and before/after graph reports.

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kgroute/hgnn.hpp"

namespace kgroute {

enum class SalienceMode { kOracle, kSelf };

std::string to_string(SalienceMode m);
SalienceMode parse_salience_mode(const std::string& s);
std::string to_string(StateSite s);
StateSite parse_state_site(const std::string& s);

struct SalienceOptions {
  SalienceMode mode = SalienceMode::kOracle;
  // h^(L) of entities never reaches the scorer, so its gradient is zero;
  // the input embeddings are the default site.
  StateSite site = StateSite::kInput;
  // Multiplies the loss before backward (tests the scale invariance).
  double loss_scale = 1.0;
};

struct SalienceMap {
  std::vector<std::string> entities;  // graph entity order
  std::vector<double> raw;            // L2 norm of the loss gradient per entity
  std::vector<double> alpha;          // raw / sum(raw)
  SalienceMode mode = SalienceMode::kOracle;
  std::vector<std::string> warnings;

  double at(const std::string& entity) const;
};

// Oracle mode needs the target distribution (plan agent order); self mode
// uses -log p(argmax p). All-zero raw norms give uniform alpha plus a warning.
SalienceMap entity_salience(const RoutedGraph& g, const GraphPlan& plan, const ad::Tensor& embeddings,
                            const ParamStore& params, const SalienceOptions& options,
                            const std::optional<std::vector<double>>& target = std::nullopt);

// Builds a map from given normalized scores (raw = alpha). Entities missing
// from `scores` get 0.
SalienceMap salience_from_scores(const RoutedGraph& g, const std::vector<std::pair<std::string, double>>& scores);

struct RetrievalConfig {
  double tau = 0.01;
  bool keep_mentions = true;

  void validate() const;
};

struct RetrievalResult {
  RoutedGraph graph;
  std::vector<std::string> kept;  // entity ids, graph order
  GraphStats before;
  GraphStats after;
  std::vector<std::string> warnings;
};

// Keeps entities with alpha > tau plus the query-mentioned ones (when
// enabled), then takes the induced subgraph. If no entity survives, the top
// entity by alpha is kept and a warning recorded.
RetrievalResult retrieve_subgraph(const RoutedGraph& g, const SalienceMap& salience, const RetrievalConfig& config,
                                  const std::optional<std::vector<std::string>>& signal = std::nullopt);

struct RetrievalReport {
  std::size_t queries = 0;
  double nodes_before = 0.0;
  double nodes_after = 0.0;
  double node_drop_pct = 0.0;
  double edges_before = 0.0;
  double edges_after = 0.0;
  double edge_drop_pct = 0.0;
  std::optional<double> snr_before;
  std::optional<double> snr_after;
  std::optional<double> snr_raise_pct;
};

// Percentage change of the means: drop = (b - a) / b, raise = (a - b) / b.
double drop_pct(double before, double after);
double raise_pct(double before, double after);

RetrievalReport retrieval_report(const std::vector<std::pair<GraphStats, GraphStats>>& rows);
std::string format_retrieval_table(const std::vector<std::pair<std::string, RetrievalReport>>& rows);
nlohmann::json retrieval_record(const RetrievalReport& r);

// JSON lines {"query", "entity", "raw", "alpha"} in graph entity order.
std::string salience_dump(const std::string& query_id, const SalienceMap& s);

}  // namespace kgroute
