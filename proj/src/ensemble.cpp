#include "kgroute/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "kgroute/error.hpp"

namespace kgroute {

using nlohmann::json;

namespace {

constexpr double kTieSlack = 1e-12;

}  // namespace

void RouteDistribution::validate() const {
  if (agents.empty() || agents.size() != probs.size()) {
    throw ContractError("route distribution needs one probability per agent");
  }
  double sum = 0.0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0) throw ContractError("route probabilities must be finite and non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ContractError("route probabilities do not sum to 1");
}

RouteDistribution RouteDistribution::uniform(const std::vector<std::string>& agents) {
  RouteDistribution d;
  d.agents = agents;
  d.probs.assign(agents.size(), agents.empty() ? 0.0 : 1.0 / static_cast<double>(agents.size()));
  return d;
}

RouteDistribution prune_topk(const RouteDistribution& dist, std::size_t k) {
  dist.validate();
  if (k < 1 || k > dist.agents.size()) throw ContractError("top-k needs 1 <= k <= number of agents");
  if (k == dist.agents.size()) return dist;
  std::vector<std::size_t> order(dist.agents.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dist.probs[a] != dist.probs[b]) return dist.probs[a] > dist.probs[b];
    return dist.agents[a] < dist.agents[b];
  });
  order.resize(k);
  std::sort(order.begin(), order.end());
  RouteDistribution out;
  out.checkpoint = dist.checkpoint;
  out.query_id = dist.query_id;
  double sum = 0.0;
  for (std::size_t i : order) sum += dist.probs[i];
  for (std::size_t i : order) {
    out.agents.push_back(dist.agents[i]);
    out.probs.push_back(sum > 0.0 ? dist.probs[i] / sum : 1.0 / static_cast<double>(k));
  }
  return out;
}

void VoteConfig::validate() const {
  if (!(theta > 0.0 && theta <= 1.0)) throw ConfigError("vote theta must lie in (0, 1]");
  if (k && *k == 0) throw ConfigError("vote k must be at least 1");
}

VoteResult weighted_vote(const std::vector<AgentAnswer>& answers, const RouteDistribution& dist,
                         const VoteConfig& config) {
  config.validate();
  const RouteDistribution pruned = config.k ? prune_topk(dist, std::min(*config.k, dist.agents.size())) : dist;
  pruned.validate();
  std::map<std::string, const AgentAnswer*> by_agent;
  for (const auto& a : answers) {
    if (!dist.query_id.empty() && a.query_id != dist.query_id) continue;
    if (!by_agent.emplace(a.agent_id, &a).second) {
      throw ValidationError("two answers from agent '" + a.agent_id + "' for one query");
    }
  }
  VoteResult out;
  double present = 0.0;
  for (std::size_t i = 0; i < pruned.agents.size(); ++i) {
    if (by_agent.count(pruned.agents[i])) {
      present += pruned.probs[i];
    } else {
      out.missing.push_back(pruned.agents[i]);
    }
  }
  const double scale = config.missing_as_empty || out.missing.empty() || present <= 0.0 ? 1.0 : 1.0 / present;

  std::map<std::string, double> score;
  for (std::size_t i = 0; i < pruned.agents.size(); ++i) {
    auto it = by_agent.find(pruned.agents[i]);
    if (it == by_agent.end()) continue;
    for (const auto& t : it->second->tags) score[t] += pruned.probs[i] * scale;
  }
  for (const auto& [tag, s] : score) {
    const bool in = s >= config.theta - kTieSlack;
    out.trace.push_back({tag, s, in});
    if (in) out.tags.insert(tag);
  }
  return out;
}

VoteResult majority_vote(const std::vector<AgentAnswer>& answers, double theta) {
  std::vector<std::string> agents;
  for (const auto& a : answers) agents.push_back(a.agent_id);
  std::sort(agents.begin(), agents.end());
  if (std::adjacent_find(agents.begin(), agents.end()) != agents.end()) {
    throw ValidationError("majority vote got two answers from one agent");
  }
  if (agents.empty()) return {};
  VoteConfig c;
  c.theta = theta;
  return weighted_vote(answers, RouteDistribution::uniform(agents), c);
}

json vote_trace_record(const std::string& query_id, const VoteResult& v) {
  json rows = json::array();
  for (const auto& r : v.trace) rows.push_back({{"tag", r.tag}, {"score", r.score}, {"included", r.included}});
  json j{{"query", query_id}, {"prediction", v.tags}, {"trace", rows}};
  if (!v.missing.empty()) j["missing"] = v.missing;
  return j;
}

OracleResult best_agent_oracle(const PerformanceRecord& perf, const std::map<std::string, std::string>& setting_of,
                               OracleScope scope) {
  OracleResult out;
  if (perf.f1.empty()) return out;
  std::map<std::string, std::vector<std::string>> groups;
  for (const auto& [q, _] : perf.f1) {
    if (scope == OracleScope::kPerQuery) {
      groups[q].push_back(q);
      continue;
    }
    auto it = setting_of.find(q);
    if (it == setting_of.end()) throw ValidationError("query '" + q + "' has no setting label");
    groups[it->second].push_back(q);
  }
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& [group, queries] : groups) {
    std::map<std::string, double> sum;
    for (const auto& q : queries) {
      for (const auto& [a, f] : perf.f1.at(q)) sum[a] += f;
    }
    std::string best;
    double best_sum = -1.0;
    for (const auto& [a, s] : sum) {
      if (s > best_sum) {
        best = a;
        best_sum = s;
      }
    }
    double group_total = 0.0;
    for (const auto& q : queries) group_total += perf.has(q, best) ? perf.at(q, best) : 0.0;
    out.agent[group] = best;
    out.group_f1[group] = group_total / static_cast<double>(queries.size());
    total += group_total;
    n += queries.size();
  }
  out.mean_f1 = total / static_cast<double>(n);
  return out;
}

}  // namespace kgroute
