#pragma once

// Example-based multi-label metrics, per-setting aggregation and report tables.
//
// Per query, with P = pred and G = gold tag sets:
//   precision = |P ∩ G| / |P|      (0 when P is empty)
//   recall    = |P ∩ G| / |G|
//   f1        = 2 p r / (p + r)    (0 when p + r = 0)
//   accuracy  = 1 iff P == G
// All reported as percentages. Queries with empty gold are flagged and left
// out of every mean.

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace kgroute {

using TagSet = std::set<std::string>;

struct QueryMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Throws ContractError for an empty gold set.
QueryMetrics multilabel_metrics(const TagSet& pred, const TagSet& gold);

// F1 as a fraction in [0, 1]; 0 for empty gold.
double f1_score(const TagSet& pred, const TagSet& gold);

struct GoldEntry {
  TagSet gold;
  std::string setting;
};
using GoldSet = std::map<std::string, GoldEntry>;  // query id -> gold

struct ScoredQuery {
  std::string query_id;
  std::string setting;
  QueryMetrics metrics;
};

struct ScoredRun {
  std::vector<ScoredQuery> rows;  // query-id order
  std::vector<std::string> empty_gold;
};

// Scores every gold query. The prediction and gold query sets must match
// exactly (ValidationError otherwise).
ScoredRun score_run(const std::map<std::string, TagSet>& predictions, const GoldSet& gold);

struct MetricsRow {
  std::string group;
  std::size_t queries = 0;
  std::size_t runs = 1;
  QueryMetrics mean;
  std::optional<QueryMetrics> stddev;  // only for multi-run aggregates
};

// Example-based means per setting plus an "all" row, then mean and sample
// standard deviation over runs. Runs must cover the same query ids.
// Groups with no scored query are omitted and named in `notes`.
struct AggregateResult {
  std::vector<MetricsRow> rows;
  std::vector<std::string> notes;
};
AggregateResult aggregate(const std::vector<ScoredRun>& runs);

// Aligned plain-text table and line-delimited records.
std::string format_metrics_table(const std::vector<MetricsRow>& rows, const std::string& title);
nlohmann::json metrics_records(const std::vector<MetricsRow>& rows);

// Method comparison: one row per method, all methods scored on the
// same query set. Throws ValidationError when the query sets differ.
struct MethodRow {
  std::string method;
  MetricsRow metrics;
  std::set<std::string> best;  // metric names where this row is (jointly) best
};
std::vector<MethodRow> compare_methods(
    const std::vector<std::pair<std::string, std::map<std::string, TagSet>>>& methods,
    const GoldSet& gold);
std::string format_comparison_table(const std::vector<MethodRow>& rows);

}  // namespace kgroute
