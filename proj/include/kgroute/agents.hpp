#pragma once

// Graph linearization, the seeded synthetic agent simulator and the
// planted-expert scenario generator.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kgroute/graph.hpp"
#include "kgroute/labels.hpp"

namespace kgroute {

// One "['src', 'rel', 'dst']" line per domain triple, sorted by
// (src, rel, dst). Query/agent scaffolding is never rendered.
std::string linearize_graph(const ContextGraph& g);
std::string linearize_graph(const RoutedGraph& g);

struct SyntheticAgentProfile {
  std::string agent_id;
  std::map<std::string, double> competence;  // family -> hit rate
  double flip = 0.02;                        // per non-gold vocabulary tag
  double sensitivity = 0.0;                  // hit-rate penalty per excess noise entity
  std::size_t budget = 6;                    // noise entities tolerated for free

  // clamp(competence[family] - sensitivity * max(0, noise - budget), 0, 1).
  // Throws ConfigError for an unknown family.
  double effective_hit(const std::string& family, std::size_t noise_entities) const;
};

// Entities of the context outside the query's relevant set. Zero when the
// query carries no relevant set.
std::size_t noise_entity_count(const QueryInstance& q, const ContextGraph& context);

// Pure function of (profile, query, context, vocabulary, seed). Every
// vocabulary tag (plus any gold tag outside it) gets one uniform draw from a
// stream keyed by (seed, agent, query): gold tags are emitted when the draw
// is below the effective hit rate, others when it is below the flip rate.
AgentAnswer simulate_answer(const SyntheticAgentProfile& profile, const QueryInstance& q,
                            const ContextGraph& context, const std::vector<std::string>& vocabulary,
                            std::uint64_t seed, const std::string& context_label = "full");

// ---------------------------------------------------------------------------
// Planted-expert scenario.

struct ScenarioConfig {
  std::uint64_t seed = 1;
  std::size_t families = 2;  // 1..4
  std::size_t train_per_family = 200;
  std::size_t test_per_family = 100;
  double val_fraction = 0.2;  // carved out of the train split
  std::size_t noise_min = 15;
  std::size_t noise_max = 25;
  std::size_t backbones = 4;  // agents = backbones x 6 strategies
  double expert_hit = 0.9;
  double base_hit = 0.4;
  double flip = 0.02;
  // Trailing non-expert agents turned noisy (high flip rate).
  std::size_t noisy_agents = 0;
  double noisy_flip = 0.3;
  bool noise_sensitive = false;
  double sensitivity = 0.05;
  std::size_t budget = 6;
  // Per (agent, query) probability of an agent attending each entity.
  double attend_signal = 0.5;
  double attend_noise = 0.0;

  void validate() const;
};

struct Scenario {
  ScenarioConfig config;
  std::vector<QueryInstance> queries;  // train, val, test
  std::vector<AgentSpec> pool;
  std::vector<SyntheticAgentProfile> profiles;  // pool order
  std::vector<std::string> vocabulary;          // sorted
  std::map<std::string, std::string> experts;   // family -> agent id
  std::map<std::string, std::string> conditions;  // family -> condition entity
};

Scenario generate_scenario(const ScenarioConfig& config);

// Profiles as JSON (for the run directory) and back.
std::string serialize_profiles(const std::vector<SyntheticAgentProfile>& profiles);
std::vector<SyntheticAgentProfile> parse_profiles(const std::string& text);

}  // namespace kgroute
