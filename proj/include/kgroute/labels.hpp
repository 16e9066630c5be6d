#pragma once

// Per-query, per-agent F1 labels and the answers interchange format.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "kgroute/metrics.hpp"

namespace kgroute {

struct PerformanceRecord {
  // query id -> agent id -> F1 in [0, 1]
  std::map<std::string, std::map<std::string, double>> f1;
  // (query, agent) pairs recorded as 0 because the answer was missing or
  // unparseable.
  std::set<std::pair<std::string, std::string>> flagged;

  double at(const std::string& query, const std::string& agent) const;
  bool has(const std::string& query, const std::string& agent) const;
  friend bool operator==(const PerformanceRecord&, const PerformanceRecord&) = default;
};

// One JSON object per line: {"query", "agent", "f1"[, "flag"]}, sorted by
// (query, agent). F1 outside [0, 1] or duplicate pairs are rejected.
void write_performance(const std::string& path, const PerformanceRecord& perf);
PerformanceRecord read_performance(const std::string& path);

struct AgentAnswer {
  std::string agent_id;
  std::string query_id;
  TagSet tags;
  // Tags (also present in `tags`) that are not in the declared vocabulary.
  TagSet out_of_vocabulary;
  std::string context = "full";  // full | retrieved
  bool unparseable = false;
  std::optional<double> latency_ms;

  friend bool operator==(const AgentAnswer&, const AgentAnswer&) = default;
};

// Line-delimited JSON, one answer per line.
void write_answers(const std::string& path, const std::vector<AgentAnswer>& answers);
std::vector<AgentAnswer> read_answers(const std::string& path);

// Example-based F1 per (query, agent). Every (query in gold) x agent pair
// gets an entry; missing or unparseable answers score 0 and are flagged.
PerformanceRecord score_agent_answers(const std::vector<AgentAnswer>& answers,
                                      const std::map<std::string, TagSet>& gold,
                                      const std::vector<std::string>& agents);

}  // namespace kgroute
