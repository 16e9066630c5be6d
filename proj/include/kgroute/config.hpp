#pragma once

// One JSON file governs a run; unknown keys are errors. Missing keys take
// the defaults below.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kgroute/agents.hpp"
#include "kgroute/embed.hpp"
#include "kgroute/ensemble.hpp"
#include "kgroute/hgnn.hpp"
#include "kgroute/llm.hpp"
#include "kgroute/saliency.hpp"
#include "kgroute/train.hpp"

namespace kgroute {

struct PathsConfig {
  std::string run_root = "runs";
  std::string run_dir;  // overrides run_root/<config hash>
  std::string corpus;   // ingest input (JSONL)
  std::string pool;     // agent pool JSON for non-synthetic runs
  std::string answers;  // external answers file imported by `label`
  std::string lexicon;  // subkind lexicon JSON
  std::string cache;    // LLM / embedding cache; default <run>/cache
};

enum class SalienceModeSetting { kAuto, kOracle, kSelf };

struct RetrievalSettings {
  RetrievalConfig retrieval;
  SalienceModeSetting mode = SalienceModeSetting::kAuto;  // oracle when labels exist
  StateSite site = StateSite::kInput;
};

enum class AgentSource { kSynthetic, kLlm };

struct AgentsConfig {
  AgentSource source = AgentSource::kSynthetic;
  LlmConfig llm;  // endpoint may stay empty for synthetic runs
};

struct EvalConfig {
  std::string split = "test";  // queries routed, voted and scored; "" = all
};

struct SweepConfig {
  std::vector<std::size_t> k{1, 5, 10, 15, 20, 24};
  std::vector<int> layers{1, 2, 3, 4};
  std::vector<int> hidden{64, 128, 256};
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  PathsConfig paths;
  ScenarioConfig scenario;
  ModelConfig model;
  TrainConfig train;
  RetrievalSettings retrieval;
  VoteConfig vote;
  EmbedderConfig embedder;
  AgentsConfig agents;
  EvalConfig eval;
  SweepConfig sweep;

  RunConfig();

  // Parses and validates. Throws ConfigError naming the offending key.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);

  // Every field, including defaults; `seed` is copied into the scenario and
  // the model/training streams are derived from it.
  nlohmann::json resolved() const;
  std::string hash() const;  // 16 hex digits of the resolved JSON
  std::string run_directory() const;

  void validate() const;
};

// Re-derives the seeded sub-configs after `seed` changes.
void apply_seed(RunConfig& c, std::uint64_t seed);

}  // namespace kgroute
