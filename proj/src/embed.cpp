#include "kgroute/embed.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kgroute/error.hpp"
#include "kgroute/http.hpp"

namespace kgroute {

using nlohmann::json;

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;
constexpr std::uint64_t kSignSalt = 0x9e3779b97f4a7c15ULL;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return out;
}

std::string sanitize(std::string_view s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_';
  return out.empty() ? "default" : out;
}

}  // namespace

void EmbedderConfig::validate() const {
  if (dimension < 8) throw ConfigError("embedder dimension must be >= 8");
  if (mode == Mode::kExternal) {
    if (endpoint.empty()) throw ConfigError("external embedder needs an endpoint");
    if (model.empty()) throw ConfigError("external embedder needs a model name");
    if (max_batch == 0 || max_in_flight == 0) throw ConfigError("batch and concurrency must be > 0");
    if (max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
  }
}

std::uint64_t stable_hash(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = kFnvOffset ^ splitmix64(seed);
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return splitmix64(h);
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

EmbeddingVector normalize(EmbeddingVector v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  if (ss == 0.0) return v;
  const double inv = 1.0 / std::sqrt(ss);
  for (double& x : v) x *= inv;
  return v;
}

EmbeddingVector hash_embed(std::string_view text, std::size_t dimension, std::uint64_t seed) {
  if (dimension == 0) throw ContractError("embedding dimension must be positive");
  const auto tokens = tokenize(text);
  if (tokens.empty()) throw ContractError("cannot embed text with zero tokens: '" + std::string(text) + "'");
  EmbeddingVector v(dimension, 0.0);
  for (const auto& t : tokens) {
    const std::size_t idx = stable_hash(t, seed) % dimension;
    const double sign = (stable_hash(t, seed ^ kSignSalt) & 1U) ? 1.0 : -1.0;
    v[idx] += sign;
  }
  // Cancellation can leave a zero vector; fall back to the whole-text hash.
  bool zero = true;
  for (double x : v) zero = zero && x == 0.0;
  if (zero) v[stable_hash(text, seed) % dimension] = 1.0;
  return normalize(std::move(v));
}

std::string query_text(std::string_view question) { return "query: " + std::string(question); }

std::string agent_text(const AgentSpec& agent) {
  return "agent backbone: " + agent.backbone + "; strategy: " + to_string(agent.strategy) +
         "; description: " + agent.description;
}

std::string node_text(const Node& node, const std::map<std::string, AgentSpec>& pool) {
  switch (node.kind) {
    case NodeKind::kEntity:
      return node.text;
    case NodeKind::kQuery:
      return query_text(node.text);
    case NodeKind::kAgent: {
      auto it = pool.find(node.text);
      if (it == pool.end()) throw ContractError("no agent spec for node '" + node.id + "'");
      return agent_text(it->second);
    }
  }
  throw ContractError("unknown node kind");
}

EmbeddingVector Embedder::embed_text(std::string_view text) {
  auto out = embed_batch({std::string(text)});
  return std::move(out.front());
}

HashEmbedder::HashEmbedder(std::size_t dimension, std::uint64_t seed)
    : dimension_(dimension), seed_(seed) {
  if (dimension_ < 8) throw ConfigError("embedder dimension must be >= 8");
}

std::vector<EmbeddingVector> HashEmbedder::embed_batch(const std::vector<std::string>& texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    if (trim(t).empty()) throw ContractError("cannot embed empty text");
    out.push_back(hash_embed(t, dimension_, seed_));
  }
  return out;
}

// ---------------------------------------------------------------------------

ExternalEmbedder::ExternalEmbedder(EmbedderConfig config) : config_(std::move(config)) {
  config_.mode = EmbedderConfig::Mode::kExternal;
  config_.validate();
}

std::string ExternalEmbedder::cache_path(const std::string& text) const {
  namespace fs = std::filesystem;
  return (fs::path(config_.cache_dir) / sanitize(config_.model) /
          (hex64(stable_hash(text, 0)) + ".json"))
      .string();
}

std::vector<EmbeddingVector> ExternalEmbedder::fetch(const std::vector<std::string>& texts) {
  json req{{"model", config_.model}, {"input", texts}};
  std::map<std::string, std::string> headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
    headers["Authorization"] = std::string("Bearer ") + key;
  }
  const std::string body = req.dump();
  const http::RetryPolicy policy{config_.max_attempts, config_.initial_backoff};
  // A response that does not cover the whole batch is retried as a whole.
  std::vector<EmbeddingVector> result;
  http::with_retries(policy, [&]() -> std::string {
    ++upstream_calls_;
    const auto res = http::post_json(config_.endpoint, body, headers, config_.timeout);
    if (res.status != 200) http::raise_for_status(res, "embedding endpoint");
    json doc;
    try {
      doc = json::parse(res.body);
    } catch (const json::exception& e) {
      throw TransportError(std::string("embedding endpoint sent invalid JSON: ") + e.what(), true);
    }
    std::vector<EmbeddingVector> vecs(texts.size());
    std::vector<bool> seen(texts.size(), false);
    auto take = [&](std::size_t i, const json& arr) {
      if (i >= texts.size() || !arr.is_array()) {
        throw TransportError("embedding response has a bad entry", true);
      }
      vecs[i] = arr.get<EmbeddingVector>();
      seen[i] = true;
    };
    if (doc.contains("data") && doc["data"].is_array()) {
      const auto& data = doc["data"];
      for (std::size_t k = 0; k < data.size(); ++k) {
        const auto& item = data[k];
        const std::size_t i = item.contains("index") ? item["index"].get<std::size_t>() : k;
        take(i, item.value("embedding", json()));
      }
    } else if (doc.contains("embeddings") && doc["embeddings"].is_array()) {
      const auto& data = doc["embeddings"];
      for (std::size_t k = 0; k < data.size(); ++k) take(k, data[k]);
    } else {
      throw TransportError("embedding response lacks 'data' or 'embeddings'", true);
    }
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (!seen[i]) throw TransportError("embedding response missing entries (partial batch)", true);
      if (vecs[i].size() != config_.dimension) {
        throw ContractError("embedding endpoint returned dimension " +
                            std::to_string(vecs[i].size()) + ", expected " +
                            std::to_string(config_.dimension));
      }
      for (double x : vecs[i]) {
        if (!std::isfinite(x)) throw TransportError("embedding response has non-finite values", true);
      }
      vecs[i] = normalize(std::move(vecs[i]));
    }
    result = std::move(vecs);
    return {};
  });
  return result;
}

std::vector<EmbeddingVector> ExternalEmbedder::embed_batch(const std::vector<std::string>& texts) {
  std::vector<EmbeddingVector> out(texts.size());
  if (texts.empty()) return out;

  // Resolve cache hits; collect distinct misses.
  std::map<std::string, std::vector<std::size_t>> misses;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (trim(texts[i]).empty()) throw ContractError("cannot embed empty text");
    if (!config_.cache_dir.empty()) {
      std::ifstream in(cache_path(texts[i]), std::ios::binary);
      if (in) {
        try {
          json doc = json::parse(in);
          if (doc.at("text").get<std::string>() == texts[i] &&
              doc.at("model").get<std::string>() == config_.model) {
            out[i] = doc.at("embedding").get<EmbeddingVector>();
            if (out[i].size() == config_.dimension) continue;
          }
        } catch (const json::exception&) {
          // Corrupt cache entry: refetch.
        }
      }
    }
    misses[texts[i]].push_back(i);
  }
  if (misses.empty()) return out;

  std::vector<std::string> unique;
  unique.reserve(misses.size());
  for (const auto& [t, _] : misses) unique.push_back(t);

  std::vector<std::vector<std::string>> chunks;
  for (std::size_t b = 0; b < unique.size(); b += config_.max_batch) {
    const std::size_t e = std::min(unique.size(), b + config_.max_batch);
    chunks.emplace_back(unique.begin() + static_cast<std::ptrdiff_t>(b),
                        unique.begin() + static_cast<std::ptrdiff_t>(e));
  }

  std::vector<std::vector<EmbeddingVector>> fetched(chunks.size());
  for (std::size_t c = 0; c < chunks.size(); c += config_.max_in_flight) {
    const std::size_t end = std::min(chunks.size(), c + config_.max_in_flight);
    std::vector<std::future<std::vector<EmbeddingVector>>> inflight;
    for (std::size_t j = c; j < end; ++j) {
      inflight.push_back(std::async(std::launch::async, [this, &chunks, j] { return fetch(chunks[j]); }));
    }
    for (std::size_t j = c; j < end; ++j) fetched[j] = inflight[j - c].get();
  }

  for (std::size_t c = 0; c < chunks.size(); ++c) {
    for (std::size_t k = 0; k < chunks[c].size(); ++k) {
      const std::string& text = chunks[c][k];
      const EmbeddingVector& v = fetched[c][k];
      if (!config_.cache_dir.empty()) {
        json doc{{"model", config_.model}, {"text", text}, {"embedding", v}};
        http::atomic_write(cache_path(text), doc.dump());
      }
      for (std::size_t i : misses[text]) out[i] = v;
    }
  }
  return out;
}

std::unique_ptr<Embedder> make_embedder(const EmbedderConfig& config) {
  config.validate();
  if (config.mode == EmbedderConfig::Mode::kExternal) return std::make_unique<ExternalEmbedder>(config);
  return std::make_unique<HashEmbedder>(config);
}

std::vector<EmbeddingVector> CachedEmbedder::embed_batch(const std::vector<std::string>& texts) {
  std::vector<std::string> todo;
  for (const auto& t : texts) {
    if (memo_.find(t) == memo_.end()) todo.push_back(t);
  }
  std::sort(todo.begin(), todo.end());
  todo.erase(std::unique(todo.begin(), todo.end()), todo.end());
  if (!todo.empty()) {
    auto vecs = inner_.embed_batch(todo);
    for (std::size_t i = 0; i < todo.size(); ++i) memo_.emplace(todo[i], std::move(vecs[i]));
  }
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(memo_.find(t)->second);
  return out;
}

ad::Tensor embed_graph(const RoutedGraph& g, const std::map<std::string, AgentSpec>& pool,
                       Embedder& embedder) {
  std::vector<std::string> texts;
  texts.reserve(g.nodes().size());
  for (const auto& n : g.nodes()) texts.push_back(node_text(n, pool));
  const auto vecs = embedder.embed_batch(texts);
  if (vecs.size() != texts.size()) throw ContractError("embedder returned wrong number of vectors");
  const std::size_t d = vecs.empty() ? embedder.dimension() : vecs.front().size();
  ad::Tensor x(static_cast<Eigen::Index>(vecs.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    if (vecs[i].size() != d) {
      throw ContractError("mixed embedding dimensions: node '" + g.nodes()[i].id + "' has " +
                          std::to_string(vecs[i].size()) + ", expected " + std::to_string(d));
    }
    for (std::size_t j = 0; j < d; ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = vecs[i][j];
    }
  }
  return x;
}

}  // namespace kgroute
