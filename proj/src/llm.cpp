#include "kgroute/llm.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <thread>

#include <nlohmann/json.hpp>

#include "kgroute/agents.hpp"
#include "kgroute/embed.hpp"
#include "kgroute/error.hpp"
#include "kgroute/http.hpp"

namespace kgroute {

using nlohmann::json;

namespace {

constexpr const char* kAnswerFormat =
    "Reply with a single JSON object of the form {\"answer\": \"<tags, comma separated>\"} and nothing after it.";

std::string with_format(const std::string& body) { return body + "\n\n" + kAnswerFormat + "\n"; }

const std::map<Strategy, std::string>& templates() {
  static const std::map<Strategy, std::string> t{
      {Strategy::kRaw, with_format("Question: {question}\n\nKnowledge graph triples:\n{graph}\n"
                                   "Give the nutrition tags that answer the question.")},
      {Strategy::kCot, with_format("Question: {question}\n\nKnowledge graph triples:\n{graph}\n"
                                   "Work through the relevant triples step by step, then state the nutrition "
                                   "tags that answer the question.")},
      {Strategy::kSc, with_format("Question: {question}\n\nKnowledge graph triples:\n{graph}\n"
                                  "Draft three independent lines of reasoning over the triples. Keep the tags that "
                                  "most of the drafts agree on.")},
      {Strategy::kMad, with_format("Question: {question}\n\nKnowledge graph triples:\n{graph}\n"
                                   "Play three debaters. Each proposes tags citing triples, then each critiques the "
                                   "others. After two rounds, report the tags the debate settles on.")},
      {Strategy::kReactReflect, with_format("Question: {question}\n\nKnowledge graph triples:\n{graph}\n"
                                            "Alternate Thought and Action steps, where an action looks up triples "
                                            "about one entity. When done, reflect on any mistakes, fix them and "
                                            "give the final tags.")},
      {Strategy::kSummary, with_format("Question: {question}\n\nKnowledge graph triples:\n{graph}\n"
                                       "Play three analysts who each answer on their own, then a summarizer who "
                                       "merges their answers into one final tag list.")},
  };
  return t;
}

// End of the balanced object starting at `open`, honoring string literals.
std::optional<std::size_t> object_end(const std::string& s, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i;
    }
  }
  return std::nullopt;
}

// Doubles backslashes that do not start a valid JSON escape ("low\_sugar").
std::string repair_escapes(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += s[i];
    if (s[i] != '\\') continue;
    const char n = i + 1 < s.size() ? s[i + 1] : '\0';
    if (std::string("\"\\/bfnrtu").find(n) == std::string::npos || n == '\0') {
      out += '\\';
    } else {
      out += n;
      ++i;
    }
  }
  return out;
}

std::string norm_tag(std::string s) {
  std::string out;
  for (char c : s) {
    if (c == '\\' || c == '"' || c == '\'' || c == '`' || c == '*') continue;
    if (c == ' ' || c == '-' || c == '_') {
      if (!out.empty() && out.back() != '_') out += '_';
      continue;
    }
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  while (!out.empty() && (out.back() == '_' || out.back() == '.')) out.pop_back();
  while (!out.empty() && out.front() == '_') out.erase(out.begin());
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' ? c : '_';
  return out;
}

}  // namespace

const std::string& prompt_template(Strategy s) { return templates().at(s); }

std::string render_prompt(Strategy s, const std::string& question, const std::string& graph_text) {
  // Single pass so placeholder-like text inside the inputs is left alone.
  const std::string& t = prompt_template(s);
  std::string out;
  for (std::size_t i = 0; i < t.size();) {
    if (t.compare(i, 10, "{question}") == 0) {
      out += question;
      i += 10;
    } else if (t.compare(i, 7, "{graph}") == 0) {
      out += graph_text;
      i += 7;
    } else {
      out += t[i++];
    }
  }
  return out;
}

std::optional<json> extract_answer(const std::string& text) {
  std::optional<json> found;
  for (std::size_t i = text.find('{'); i != std::string::npos; i = text.find('{', i + 1)) {
    const auto end = object_end(text, i);
    if (!end) continue;
    const std::string candidate = text.substr(i, *end - i + 1);
    json doc = json::parse(candidate, nullptr, false);
    if (doc.is_discarded()) doc = json::parse(repair_escapes(candidate), nullptr, false);
    if (doc.is_object() && doc.contains("answer") && (doc["answer"].is_string() || doc["answer"].is_array())) {
      found = doc["answer"];
      i = *end;
    }
  }
  return found;
}

TagMapping map_answer_tags(const json& answer, const std::vector<std::string>& vocabulary) {
  std::vector<std::string> pieces;
  auto split = [&](const std::string& s) {
    std::string cur;
    for (char c : s) {
      if (c == ',' || c == ';' || c == '\n') {
        pieces.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    pieces.push_back(cur);
  };
  if (answer.is_string()) {
    split(answer.get<std::string>());
  } else if (answer.is_array()) {
    for (const auto& item : answer) {
      if (item.is_string()) split(item.get<std::string>());
    }
  }
  std::map<std::string, std::string> lookup;
  for (const auto& v : vocabulary) lookup.emplace(norm_tag(v), v);
  TagMapping m;
  for (const auto& p : pieces) {
    const std::string key = norm_tag(p);
    if (key.empty() || key == "none") continue;
    if (auto it = lookup.find(key); it != lookup.end()) {
      m.tags.insert(it->second);
    } else {
      m.tags.insert(key);
      m.out_of_vocabulary.insert(key);
    }
  }
  return m;
}

void LlmConfig::validate() const {
  if (endpoint.empty()) throw ConfigError("llm endpoint is not set");
  http::parse_url(endpoint);
  if (max_attempts < 1) throw ConfigError("llm max_attempts must be at least 1");
  if (concurrency < 1) throw ConfigError("llm concurrency must be at least 1");
  if (!(temperature >= 0.0)) throw ConfigError("llm temperature must be non-negative");
}

LlmClient::LlmClient(LlmConfig config) : config_(std::move(config)) { config_.validate(); }

std::string LlmClient::cache_path(const std::string& model, const std::string& prompt) const {
  namespace fs = std::filesystem;
  return (fs::path(config_.cache_dir) / sanitize(model) / (hex64(stable_hash(prompt, 0)) + ".json")).string();
}

void LlmClient::pace() {
  if (config_.min_interval.count() <= 0) return;
  std::lock_guard lock(pace_mutex_);
  const auto next = last_request_ + config_.min_interval;
  const auto now = std::chrono::steady_clock::now();
  if (now < next) std::this_thread::sleep_for(next - now);
  last_request_ = std::chrono::steady_clock::now();
}

std::string LlmClient::complete(const std::string& model, const std::string& prompt, bool refresh) {
  const bool cached = !config_.cache_dir.empty();
  if (cached && !refresh) {
    std::ifstream in(cache_path(model, prompt), std::ios::binary);
    if (in) {
      json doc = json::parse(in, nullptr, false);
      if (doc.is_object() && doc.value("model", "") == model && doc.value("prompt", "") == prompt &&
          doc.contains("response")) {
        return doc["response"].get<std::string>();
      }
    }
  }
  json req{{"model", model},
           {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
           {"temperature", config_.temperature}};
  std::map<std::string, std::string> headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
    headers["Authorization"] = std::string("Bearer ") + key;
  }
  const std::string body = req.dump();
  const http::RetryPolicy policy{config_.max_attempts, config_.initial_backoff};
  const std::string content = http::with_retries(policy, [&]() -> std::string {
    pace();
    ++calls_;
    const auto res = http::post_json(config_.endpoint, body, headers, config_.timeout);
    if (res.status != 200) http::raise_for_status(res, "chat endpoint");
    json doc = json::parse(res.body, nullptr, false);
    if (doc.is_discarded()) throw TransportError("chat endpoint sent invalid JSON", true);
    try {
      return doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
      throw TransportError("chat response lacks choices[0].message.content", true);
    }
  });
  if (cached) {
    http::atomic_write(cache_path(model, prompt), json{{"model", model}, {"prompt", prompt}, {"response", content}}.dump());
  }
  return content;
}

AgentAnswer LlmClient::answer(const AgentSpec& agent, const QueryInstance& q, const ContextGraph& context,
                              const std::vector<std::string>& vocabulary, const std::string& context_label) {
  const std::string prompt = render_prompt(agent.strategy, q.question, linearize_graph(context));
  AgentAnswer a;
  a.agent_id = agent.id;
  a.query_id = q.id;
  a.context = context_label;
  const auto t0 = std::chrono::steady_clock::now();
  auto extracted = extract_answer(complete(agent.backbone, prompt));
  if (!extracted) extracted = extract_answer(complete(agent.backbone, prompt, true));
  a.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  if (!extracted) {
    a.unparseable = true;
    return a;
  }
  auto m = map_answer_tags(*extracted, vocabulary);
  a.tags = std::move(m.tags);
  a.out_of_vocabulary = std::move(m.out_of_vocabulary);
  return a;
}

std::vector<AgentAnswer> LlmClient::answer_all(const std::vector<AgentSpec>& agents,
                                               const std::vector<QueryInstance>& queries,
                                               const std::vector<ContextGraph>& contexts,
                                               const std::vector<std::string>& vocabulary,
                                               const std::string& context_label, std::size_t jobs) {
  if (contexts.size() != queries.size()) throw ContractError("one context per query is required");
  const std::size_t width = std::max<std::size_t>(1, std::min(jobs, config_.concurrency));
  std::vector<AgentAnswer> out(agents.size() * queries.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < out.size(); i = next++) {
      const std::size_t qi = i / agents.size();
      out[i] = answer(agents[i % agents.size()], queries[qi], contexts[qi], vocabulary, context_label);
    }
  };
  std::vector<std::future<void>> pool;
  for (std::size_t w = 0; w < width; ++w) pool.push_back(std::async(std::launch::async, worker));
  for (auto& f : pool) f.get();
  return out;
}

}  // namespace kgroute
