#pragma once

// Chat-completion agents: prompt templates per strategy, structured-answer
// extraction, tag mapping and a caching client.

#include <atomic>
#include <chrono>
#include <cstddef>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kgroute/graph.hpp"
#include "kgroute/labels.hpp"

namespace kgroute {

// Template text with {question} and {graph} placeholders.
const std::string& prompt_template(Strategy s);
std::string render_prompt(Strategy s, const std::string& question, const std::string& graph_text);

// Scans `text` for JSON objects and returns the "answer" member of the last
// one that has it. The member is returned as JSON (string or array).
std::optional<nlohmann::json> extract_answer(const std::string& text);

struct TagMapping {
  TagSet tags;  // in-vocabulary tags plus the unmapped strings
  TagSet out_of_vocabulary;
};

// Splits a string answer on commas/semicolons/newlines (arrays are taken
// item-wise), then matches each piece against the vocabulary ignoring case,
// escape backslashes and the space/hyphen/underscore distinction.
TagMapping map_answer_tags(const nlohmann::json& answer, const std::vector<std::string>& vocabulary);

struct LlmConfig {
  std::string endpoint;  // full chat-completions URL
  std::string api_key_env = "KGROUTE_LLM_API_KEY";
  std::string cache_dir;  // empty: no cache
  double temperature = 0.0;
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::milliseconds timeout{60000};
  std::size_t concurrency = 4;
  // Minimum spacing between requests; 0 disables.
  std::chrono::milliseconds min_interval{0};

  void validate() const;
};

class LlmClient {
 public:
  explicit LlmClient(LlmConfig config);

  // Raw completion text for (model, prompt); served from the cache when
  // present. `refresh` skips the cache lookup (the result is still stored).
  std::string complete(const std::string& model, const std::string& prompt, bool refresh = false);

  // Renders the agent's strategy prompt over the linearized context, calls
  // the backbone and maps the answer. An answer that cannot be extracted is
  // requested once more; a second failure yields unparseable = true.
  AgentAnswer answer(const AgentSpec& agent, const QueryInstance& q, const ContextGraph& context,
                     const std::vector<std::string>& vocabulary, const std::string& context_label = "full");

  // Every (agent, query) pair with at most `jobs` requests in flight (capped
  // by the configured concurrency). Output is in (query, agent) input order.
  std::vector<AgentAnswer> answer_all(const std::vector<AgentSpec>& agents, const std::vector<QueryInstance>& queries,
                                      const std::vector<ContextGraph>& contexts,
                                      const std::vector<std::string>& vocabulary, const std::string& context_label,
                                      std::size_t jobs);

  std::size_t network_calls() const noexcept { return calls_; }
  std::string cache_path(const std::string& model, const std::string& prompt) const;

 private:
  void pace();

  LlmConfig config_;
  std::atomic<std::size_t> calls_{0};
  std::mutex pace_mutex_;
  std::chrono::steady_clock::time_point last_request_{};
};

}  // namespace kgroute
