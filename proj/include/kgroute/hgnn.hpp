#pragma once

// Type-aware heterogeneous GNN router.
//
//   h0_v      = relu(x_v P_t(v))
//   m_psi     = relu(h_u W_psi)                      per edge u -> v
//   agg_psi_v = mean of m_psi over psi-neighbours u  (zero if none)
//   h'_v      = [h_v | sum_psi g_psi * agg_psi_v] U_t(v)
//   s(q, a)   = relu([h_q | h_a] W1 + b1) W2 + b2
//   p         = softmax over agents

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kgroute/autodiff.hpp"
#include "kgroute/graph.hpp"

namespace kgroute {

struct ModelConfig {
  int layers = 2;
  int hidden = 256;
  std::uint64_t seed = 7;
  // Restricts (layers, hidden) to the sweep grid L in 1..4, H in
  // {64, 128, 256}. Verification harnesses may run smaller models.
  bool strict_grid = true;
  // Replaces every ReLU with the identity. Verification only.
  bool linear = false;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Named parameter arrays plus the vocabularies they were built for.
class ParamStore {
 public:
  ParamStore() = default;

  const ModelConfig& config() const noexcept { return config_; }
  std::size_t input_dim() const noexcept { return input_dim_; }
  const std::vector<std::string>& relations() const noexcept { return relations_; }
  const std::vector<std::string>& types() const noexcept { return types_; }

  bool has(const std::string& name) const { return arrays_.count(name) != 0; }
  const ad::Tensor& at(const std::string& name) const;
  ad::Tensor& at(const std::string& name);
  const std::map<std::string, ad::Tensor>& arrays() const noexcept { return arrays_; }
  std::map<std::string, ad::Tensor>& arrays() noexcept { return arrays_; }
  std::size_t scalar_count() const;

  static std::string proj_name(const std::string& type);
  static std::string message_name(int layer, const std::string& relation);
  static std::string gate_name(int layer, const std::string& relation);
  static std::string update_name(int layer, const std::string& type);

  // Shapes, vocabularies and config as JSON.
  nlohmann::json manifest() const;
  // Rebuilds an empty (zero-filled) store from a manifest; validates shapes.
  static ParamStore from_manifest(const nlohmann::json& manifest);

  // Exact equality of config, vocabularies, shapes and every bit of data.
  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  friend ParamStore init_params(const ModelConfig&, std::size_t, const std::set<std::string>&,
                                const std::set<std::string>&, std::uint64_t);

  ModelConfig config_;
  std::size_t input_dim_ = 0;
  std::vector<std::string> relations_;
  std::vector<std::string> types_;
  std::map<std::string, ad::Tensor> arrays_;
};

// Xavier-uniform matrices, gates 1.0, biases 0. Throws ConfigError on an
// empty relation or type set.
ParamStore init_params(const ModelConfig& config, std::size_t input_dim,
                       const std::set<std::string>& relations, const std::set<std::string>& types,
                       std::uint64_t seed);

// Relation and type vocabularies across graphs.
std::set<std::string> collect_relations(const std::vector<RoutedGraph>& graphs);
std::set<std::string> collect_types(const std::vector<RoutedGraph>& graphs);

// Index lists derived from a graph; reusable across forward passes.
struct GraphPlan {
  struct RelationBlock {
    std::string key;
    std::vector<ad::Index> sources;  // unique source nodes
    std::vector<ad::Index> src;      // per edge, row into `sources`
    std::vector<ad::Index> dst;      // per edge, destination node
  };
  std::size_t nodes = 0;
  std::map<std::string, std::vector<ad::Index>> types;  // type key -> node rows
  std::vector<RelationBlock> relations;                 // sorted by key
  ad::Index query = 0;
  std::vector<ad::Index> agents;
};

GraphPlan make_plan(const RoutedGraph& g);

// Salience sites available on a forward pass.
enum class StateSite { kInput, kInitial, kFinal };

struct ForwardOptions {
  // Make the input embedding matrix a differentiable leaf.
  bool input_grad = false;
  ad::TapeOptions tape;
};

struct ForwardResult {
  ad::Tape tape;
  ad::Var input;                // N x d_in embeddings
  std::vector<ad::Var> states;  // states[l] = h^(l), l = 0..L
  ad::Var scores;               // 1 x A
  ad::Var probs;                // 1 x A
  std::map<std::string, ad::Var> params;

  const ad::Tensor& final_states() const { return tape.value(states.back()); }
  std::vector<double> distribution() const;
  ad::Var site(StateSite s) const;
};

// Throws UnsupportedSchemaError if the graph uses a relation or node type
// the store was not built for, ContractError on dimension mismatch.
ForwardResult forward(const GraphPlan& plan, const ad::Tensor& embeddings, const ParamStore& params,
                      const ForwardOptions& options = {});
ForwardResult forward(const RoutedGraph& g, const ad::Tensor& embeddings, const ParamStore& params,
                      const ForwardOptions& options = {});

// Softmax with max-subtraction. Throws ContractError on empty/non-finite.
std::vector<double> route_distribution(const std::vector<double>& scores);

// ---------------------------------------------------------------------------
// Checkpoint container: magic line, one-line JSON manifest, raw
// little-endian float64 arrays in manifest order.

void write_container(const std::string& path, const nlohmann::json& manifest,
                     const std::vector<std::pair<std::string, const ad::Tensor*>>& arrays);
// Validates the manifest before reading arrays; returns (manifest, arrays).
std::pair<nlohmann::json, std::map<std::string, ad::Tensor>> read_container(
    const std::string& path);

void save_params(const std::string& path, const ParamStore& params);
ParamStore load_params(const std::string& path);

}  // namespace kgroute
