#pragma once

// Node text -> fixed-dimension unit vectors. The default feature-hashing
// embedder is pure and platform-independent; the external embedder calls a
// REST endpoint and caches every vector on disk.

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "kgroute/autodiff.hpp"
#include "kgroute/graph.hpp"

namespace kgroute {

using EmbeddingVector = std::vector<double>;

struct EmbedderConfig {
  enum class Mode { kHash, kExternal };

  Mode mode = Mode::kHash;
  std::size_t dimension = 256;
  std::uint64_t seed = 0x6b67726f757465ULL;
  // External mode.
  std::string endpoint;
  std::string model;
  std::string api_key_env = "KGROUTE_EMBED_API_KEY";
  std::string cache_dir;
  std::size_t max_batch = 64;
  std::size_t max_in_flight = 4;
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  std::chrono::milliseconds timeout{30000};

  void validate() const;
};

// Lowercases and splits on non-alphanumeric bytes.
std::vector<std::string> tokenize(std::string_view text);

// L2-normalizes; the zero vector is returned unchanged.
EmbeddingVector normalize(EmbeddingVector v);

// Feature hashing: every token adds ±1 at a hashed index; two independent
// seeded hashes choose index and sign. Throws ContractError on empty text.
EmbeddingVector hash_embed(std::string_view text, std::size_t dimension, std::uint64_t seed);

// Seeded 64-bit hash of a byte string (FNV-1a followed by a splitmix64
// finalizer). Stable across platforms.
std::uint64_t stable_hash(std::string_view bytes, std::uint64_t seed);

// Versioned node text templates.
inline constexpr std::string_view kTemplateVersion = "node-text/v1";
std::string query_text(std::string_view question);
std::string agent_text(const AgentSpec& agent);

// Text fed to the embedder for a routed-graph node. Entities embed their
// surface text; agents need their spec from `pool` (keyed by agent id).
std::string node_text(const Node& node, const std::map<std::string, AgentSpec>& pool);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dimension() const = 0;
  virtual std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) = 0;
  EmbeddingVector embed_text(std::string_view text);
};

class HashEmbedder final : public Embedder {
 public:
  HashEmbedder(std::size_t dimension, std::uint64_t seed);
  explicit HashEmbedder(const EmbedderConfig& config)
      : HashEmbedder(config.dimension, config.seed) {}

  std::size_t dimension() const override { return dimension_; }
  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) override;

 private:
  std::size_t dimension_;
  std::uint64_t seed_;
};

// REST client: POST {"model": ..., "input": [...]}; accepts either
// {"data": [{"embedding": [...]}, ...]} or {"embeddings": [[...], ...]}.
class ExternalEmbedder final : public Embedder {
 public:
  explicit ExternalEmbedder(EmbedderConfig config);

  std::size_t dimension() const override { return config_.dimension; }
  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) override;

  // Number of HTTP requests that reached the endpoint (for tests/metrics).
  std::size_t upstream_calls() const noexcept { return upstream_calls_; }

 private:
  std::vector<EmbeddingVector> fetch(const std::vector<std::string>& texts);
  std::string cache_path(const std::string& text) const;

  EmbedderConfig config_;
  std::atomic<std::size_t> upstream_calls_{0};
};

std::unique_ptr<Embedder> make_embedder(const EmbedderConfig& config);

// Row i holds the embedding of g.nodes()[i]. Throws ContractError if the
// embedder returns vectors of mixed dimension.
ad::Tensor embed_graph(const RoutedGraph& g, const std::map<std::string, AgentSpec>& pool,
                       Embedder& embedder);

// Memoizing wrapper: each distinct text is embedded once.
class CachedEmbedder final : public Embedder {
 public:
  explicit CachedEmbedder(Embedder& inner) : inner_(inner) {}
  std::size_t dimension() const override { return inner_.dimension(); }
  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) override;

 private:
  Embedder& inner_;
  std::map<std::string, EmbeddingVector, std::less<>> memo_;
};

}  // namespace kgroute
