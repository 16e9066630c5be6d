#pragma once

// Combining agent answers under a routing distribution.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kgroute/labels.hpp"

namespace kgroute {

struct RouteDistribution {
  std::vector<std::string> agents;
  std::vector<double> probs;
  std::string checkpoint;  // provenance, may be empty
  std::string query_id;

  // Non-negative, finite, same length, sums to 1 within 1e-9.
  void validate() const;
  static RouteDistribution uniform(const std::vector<std::string>& agents);
};

// Keeps the k largest probabilities (ties: lexically smaller agent id wins)
// in their original order and renormalizes. 1 <= k <= |agents|.
RouteDistribution prune_topk(const RouteDistribution& dist, std::size_t k);

struct VoteConfig {
  std::optional<std::size_t> k;  // empty: every agent
  double theta = 0.5;
  // Treat missing answers as empty votes instead of redistributing their mass.
  bool missing_as_empty = false;

  void validate() const;
};

struct VoteTraceRow {
  std::string tag;
  double score = 0.0;
  bool included = false;
};

struct VoteResult {
  TagSet tags;
  std::vector<VoteTraceRow> trace;  // sorted by tag
  std::vector<std::string> missing;  // agents of the pruned distribution without an answer
};

// score(t) = sum_a p(a) [t in tags_a] over the pruned distribution; t is kept
// when score >= theta (a 1e-12 slack absorbs summation rounding at the tie).
// `answers` are the answers for one query; others are ignored.
VoteResult weighted_vote(const std::vector<AgentAnswer>& answers, const RouteDistribution& dist,
                         const VoteConfig& config = {});

// weighted_vote under the uniform distribution over the answering agents.
VoteResult majority_vote(const std::vector<AgentAnswer>& answers, double theta = 0.5);

nlohmann::json vote_trace_record(const std::string& query_id, const VoteResult& v);

enum class OracleScope { kPerSetting, kPerQuery };

struct OracleResult {
  // Selected agent per group (setting label, or query id for kPerQuery).
  std::map<std::string, std::string> agent;
  // Mean F1 (fraction) of the selection per group.
  std::map<std::string, double> group_f1;
  double mean_f1 = 0.0;  // over all queries
};

// `setting_of` maps query id -> setting; every labelled query must appear.
// Ties go to the lexically smaller agent id.
OracleResult best_agent_oracle(const PerformanceRecord& perf, const std::map<std::string, std::string>& setting_of,
                               OracleScope scope);

}  // namespace kgroute
