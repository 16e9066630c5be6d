#pragma once

// Heterogeneous QA graphs: raw context graphs parsed from the corpus, and
// routed graphs extended with one query node and one node per agent.

#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace kgroute {

enum class NodeKind { kEntity, kQuery, kAgent };

std::string to_string(NodeKind kind);

struct Node {
  std::string id;
  NodeKind kind = NodeKind::kEntity;
  // Entity subkind (food, user, condition, nutrition_tag, ...). Empty for
  // query and agent nodes.
  std::string subkind;
  std::string text;

  // Parameter-store type key: "query", "agent" or "entity:<subkind>".
  std::string type_key() const;

  friend bool operator==(const Node&, const Node&) = default;
};

enum class RelationKind { kDomain, kQueryMentions, kAgentAttends, kQueryAgent };

struct EdgeRelation {
  RelationKind kind = RelationKind::kDomain;
  // Domain label ("belongs to", "has", ...); empty for scaffold relations.
  std::string label;
  bool reverse = false;

  // Stable vocabulary key, e.g. "rel:has", "rev:rel:has", "query_agent".
  std::string key() const;
  EdgeRelation reversed() const;

  friend auto operator<=>(const EdgeRelation&, const EdgeRelation&) = default;
};

struct Triple {
  std::string src;
  std::string label;
  std::string dst;

  friend auto operator<=>(const Triple&, const Triple&) = default;
};

// Entity-only context graph of one QA record. Node ids are unique and every
// triple endpoint resolves to a node; triples are deduplicated.
struct ContextGraph {
  std::string record_id;
  std::vector<Node> nodes;
  std::vector<Triple> triples;

  std::optional<std::size_t> find(std::string_view id) const;
  bool contains(std::string_view id) const { return find(id).has_value(); }

  friend bool operator==(const ContextGraph&, const ContextGraph&) = default;
};

struct QueryInstance {
  std::string id;
  std::string question;
  std::vector<std::string> gold;  // sorted, unique
  ContextGraph context;
  std::vector<std::string> mentions;
  std::optional<std::vector<std::string>> relevant;  // sorted, unique
  std::string family;   // synthetic query family; empty when unknown
  std::string setting;  // sparse|standard|complex|synthetic|...
  std::string split;    // train|val|test or empty
  // No triples: kept (not rejected) but flagged.
  bool degenerate = false;

  friend bool operator==(const QueryInstance&, const QueryInstance&) = default;
};

enum class Strategy { kRaw, kCot, kSc, kMad, kReactReflect, kSummary };

inline constexpr Strategy kAllStrategies[] = {Strategy::kRaw, Strategy::kCot,
                                              Strategy::kSc,  Strategy::kMad,
                                              Strategy::kReactReflect, Strategy::kSummary};

std::string to_string(Strategy s);
Strategy parse_strategy(std::string_view s);

struct AgentSpec {
  std::string id;
  std::string backbone;
  Strategy strategy = Strategy::kRaw;
  std::string description;
  // Optional per-query attended entity ids.
  std::map<std::string, std::vector<std::string>> attends;

  friend bool operator==(const AgentSpec&, const AgentSpec&) = default;
};

// Throws ValidationError when (backbone, strategy) pairs or ids repeat.
void validate_pool(const std::vector<AgentSpec>& pool);

struct TypedEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  EdgeRelation relation;

  friend bool operator==(const TypedEdge&, const TypedEdge&) = default;
};

// A context graph extended with one query node and the agent pool. Node order
// is: base entities (base order), the query node, agents (pool order).
// Immutable after construction.
class RoutedGraph {
 public:
  RoutedGraph() = default;

  const std::string& query_id() const noexcept { return query_id_; }
  const ContextGraph& base() const noexcept { return base_; }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::vector<TypedEdge>& edges() const noexcept { return edges_; }
  std::size_t query_index() const noexcept { return query_index_; }
  const std::vector<std::size_t>& agent_indices() const noexcept { return agent_indices_; }
  const std::vector<std::string>& agent_ids() const noexcept { return agent_ids_; }
  const std::vector<std::string>& mentions() const noexcept { return mentions_; }
  std::size_t entity_count() const noexcept { return base_.nodes.size(); }
  std::optional<std::size_t> find(std::string_view node_id) const;
  // The query node reaches no entity through a mention edge.
  bool degenerate() const noexcept { return degenerate_; }
  // Non-fatal issues found while building (e.g. skipped attends).
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  // Sorted relation keys / node type keys present in the graph.
  std::set<std::string> relation_keys() const;
  std::set<std::string> type_keys() const;

  friend bool operator==(const RoutedGraph& a, const RoutedGraph& b) {
    return a.query_id_ == b.query_id_ && a.base_ == b.base_ && a.nodes_ == b.nodes_ &&
           a.edges_ == b.edges_ && a.query_index_ == b.query_index_ &&
           a.agent_indices_ == b.agent_indices_ && a.agent_ids_ == b.agent_ids_ &&
           a.mentions_ == b.mentions_;
  }

  static std::string query_node_id() { return "@query"; }
  static std::string agent_node_id(std::string_view agent_id);

 private:
  friend RoutedGraph extend_graph(const QueryInstance&, const std::vector<AgentSpec>&);
  friend RoutedGraph induced_subgraph(const RoutedGraph&, const std::set<std::string>&);
  friend RoutedGraph build_routed_graph(ContextGraph, std::string, std::vector<Node>,
                                        std::vector<TypedEdge>, std::vector<std::string>);

  void index_nodes();

  std::string query_id_;
  ContextGraph base_;
  std::vector<Node> nodes_;
  std::vector<TypedEdge> edges_;
  std::size_t query_index_ = 0;
  std::vector<std::size_t> agent_indices_;
  std::vector<std::string> agent_ids_;
  std::vector<std::string> mentions_;
  std::map<std::string, std::size_t, std::less<>> index_;
  bool degenerate_ = false;
  std::vector<std::string> warnings_;
};

// Low-level constructor used by tests (permutation properties) and loaders.
// `nodes` must contain exactly one query node; edges index into `nodes`.
RoutedGraph build_routed_graph(ContextGraph base, std::string query_id, std::vector<Node> nodes,
                               std::vector<TypedEdge> edges, std::vector<std::string> mentions);

// ---------------------------------------------------------------------------
// Entity subkind inference.

struct PositionRule {
  std::string relation;      // domain label
  bool node_is_dst = true;   // the node being typed sits at dst (else src)
  std::string other_subkind; // required subkind at the other endpoint; "" = any
  std::string subkind;
};

struct SubkindLexicon {
  std::map<std::string, std::string> exact;  // lowercase surface text -> subkind
  std::vector<PositionRule> rules;
  // Subkind for unresolved query-mentioned entities ("" disables the rule).
  std::string mentioned = "food";
  std::string fallback = "entity";

  static SubkindLexicon defaults();
  // Accepts {"exact": {...}, "rules": [...], "mentioned": "...", "fallback": "..."}.
  static SubkindLexicon from_json_text(std::string_view text);
};

// ---------------------------------------------------------------------------
// Operations.

// Parses one corpus line (a JSON object; see docs/corpus-format.md).
// Throws ParseError (with the given 1-based line number) for malformed
// records and ValidationError for dangling references.
QueryInstance parse_context_graph(std::string_view record, std::size_t line_no = 1,
                                  const SubkindLexicon& lexicon = SubkindLexicon::defaults());

// Serializes with explicit node list so that parse(serialize(q)) == q.
std::string serialize_query(const QueryInstance& q);

std::vector<QueryInstance> read_corpus(const std::string& path,
                                       const SubkindLexicon& lexicon = SubkindLexicon::defaults());
void write_corpus(const std::string& path, const std::vector<QueryInstance>& queries);

// Adds the query node, agent nodes, mention/attend/query-agent edges and the
// reverse variant of every edge. Attended ids missing from the graph are
// skipped with a warning. Throws ContractError for an empty pool.
RoutedGraph extend_graph(const QueryInstance& q, const std::vector<AgentSpec>& pool);

// Keeps the listed entity ids plus the query and every agent, with all edges
// whose endpoints both survive.
RoutedGraph induced_subgraph(const RoutedGraph& g, const std::set<std::string>& keep);

struct GraphStats {
  std::size_t entity_nodes = 0;
  std::size_t entity_edges = 0;
  std::optional<double> node_snr;  // percentage, absent without a signal set
};

// Counts exclude query/agent nodes and scaffold edges. node_snr is
// |signal ∩ entities| / |entities| * 100.
GraphStats graph_stats(const RoutedGraph& g,
                       const std::optional<std::vector<std::string>>& signal = std::nullopt);

}  // namespace kgroute
