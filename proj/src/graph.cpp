#include "kgroute/graph.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include <nlohmann/json.hpp>

#include "kgroute/error.hpp"

namespace kgroute {

using json = nlohmann::json;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string> sorted_unique(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

std::vector<std::string> string_list(const json& rec, const char* key, std::size_t line_no) {
  std::vector<std::string> out;
  if (!rec.contains(key) || rec[key].is_null()) return out;
  const json& arr = rec[key];
  if (!arr.is_array()) throw ParseError(std::string("'") + key + "' must be a list", line_no, 0);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_string()) {
      throw ParseError(std::string("'") + key + "' entries must be strings", line_no, i);
    }
    out.push_back(arr[i].get<std::string>());
  }
  return out;
}

std::string optional_string(const json& rec, const char* key) {
  if (!rec.contains(key) || rec[key].is_null()) return {};
  if (!rec[key].is_string()) throw ParseError(std::string("'") + key + "' must be a string", 0, 0);
  return rec[key].get<std::string>();
}

void infer_subkinds(ContextGraph& g, const std::vector<std::string>& mentions,
                    const std::vector<bool>& explicit_kind, const SubkindLexicon& lex) {
  const std::size_t n = g.nodes.size();
  std::vector<bool> resolved = explicit_kind;
  for (std::size_t i = 0; i < n; ++i) {
    if (resolved[i]) continue;
    auto it = lex.exact.find(lower(g.nodes[i].text));
    if (it == lex.exact.end()) it = lex.exact.find(lower(g.nodes[i].id));
    if (it != lex.exact.end()) {
      g.nodes[i].subkind = it->second;
      resolved[i] = true;
    }
  }
  if (!lex.mentioned.empty()) {
    for (const auto& m : mentions) {
      const auto i = g.find(m);
      if (i && !resolved[*i]) {
        g.nodes[*i].subkind = lex.mentioned;
        resolved[*i] = true;
      }
    }
  }
  // Relation-position rules, iterated to a fixpoint.
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& rule : lex.rules) {
      for (const auto& t : g.triples) {
        if (t.label != rule.relation) continue;
        const auto self = *g.find(rule.node_is_dst ? t.dst : t.src);
        const auto other = *g.find(rule.node_is_dst ? t.src : t.dst);
        if (resolved[self]) continue;
        if (!rule.other_subkind.empty() &&
            (!resolved[other] || g.nodes[other].subkind != rule.other_subkind)) {
          continue;
        }
        g.nodes[self].subkind = rule.subkind;
        resolved[self] = true;
        changed = true;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!resolved[i]) g.nodes[i].subkind = lex.fallback;
  }
}

void push_edge(std::vector<TypedEdge>& edges, std::size_t src, std::size_t dst,
               EdgeRelation rel) {
  edges.push_back({src, dst, rel});
  edges.push_back({dst, src, rel.reversed()});
}

}  // namespace

std::string to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::kEntity: return "entity";
    case NodeKind::kQuery: return "query";
    case NodeKind::kAgent: return "agent";
  }
  return "entity";
}

std::string Node::type_key() const {
  switch (kind) {
    case NodeKind::kQuery: return "query";
    case NodeKind::kAgent: return "agent";
    case NodeKind::kEntity: break;
  }
  return "entity:" + subkind;
}

std::string EdgeRelation::key() const {
  std::string base;
  switch (kind) {
    case RelationKind::kDomain: base = "rel:" + label; break;
    case RelationKind::kQueryMentions: base = "query_mentions"; break;
    case RelationKind::kAgentAttends: base = "agent_attends"; break;
    case RelationKind::kQueryAgent: base = "query_agent"; break;
  }
  return reverse ? "rev:" + base : base;
}

EdgeRelation EdgeRelation::reversed() const {
  EdgeRelation r = *this;
  r.reverse = !reverse;
  return r;
}

std::optional<std::size_t> ContextGraph::find(std::string_view id) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].id == id) return i;
  }
  return std::nullopt;
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kRaw: return "raw";
    case Strategy::kCot: return "cot";
    case Strategy::kSc: return "sc";
    case Strategy::kMad: return "mad";
    case Strategy::kReactReflect: return "react_reflect";
    case Strategy::kSummary: return "summary";
  }
  return "raw";
}

Strategy parse_strategy(std::string_view s) {
  for (Strategy st : kAllStrategies) {
    if (to_string(st) == s) return st;
  }
  throw ConfigError("unknown agent strategy '" + std::string(s) + "'");
}

void validate_pool(const std::vector<AgentSpec>& pool) {
  std::set<std::pair<std::string, Strategy>> pairs;
  std::set<std::string> ids;
  for (const auto& a : pool) {
    if (!ids.insert(a.id).second) throw ValidationError("duplicate agent id '" + a.id + "'");
    if (!pairs.insert({a.backbone, a.strategy}).second) {
      throw ValidationError("duplicate (backbone, strategy) pair for agent '" + a.id + "'");
    }
  }
}

// ---------------------------------------------------------------------------
// RoutedGraph

std::string RoutedGraph::agent_node_id(std::string_view agent_id) {
  return "@agent:" + std::string(agent_id);
}

std::optional<std::size_t> RoutedGraph::find(std::string_view node_id) const {
  auto it = index_.find(node_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void RoutedGraph::index_nodes() {
  index_.clear();
  agent_indices_.clear();
  agent_ids_.clear();
  bool have_query = false;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!index_.emplace(nodes_[i].id, i).second) {
      throw ValidationError("duplicate node id '" + nodes_[i].id + "'");
    }
    if (nodes_[i].kind == NodeKind::kQuery) {
      if (have_query) throw ValidationError("routed graph has more than one query node");
      have_query = true;
      query_index_ = i;
    } else if (nodes_[i].kind == NodeKind::kAgent) {
      agent_indices_.push_back(i);
      agent_ids_.push_back(nodes_[i].id.substr(std::string("@agent:").size()));
    }
  }
  if (!have_query) throw ValidationError("routed graph has no query node");
  degenerate_ = std::none_of(edges_.begin(), edges_.end(), [&](const TypedEdge& e) {
    return e.relation.kind == RelationKind::kQueryMentions && !e.relation.reverse &&
           e.src == query_index_;
  });
}

std::set<std::string> RoutedGraph::relation_keys() const {
  std::set<std::string> keys;
  for (const auto& e : edges_) keys.insert(e.relation.key());
  return keys;
}

std::set<std::string> RoutedGraph::type_keys() const {
  std::set<std::string> keys;
  for (const auto& n : nodes_) keys.insert(n.type_key());
  return keys;
}

RoutedGraph build_routed_graph(ContextGraph base, std::string query_id, std::vector<Node> nodes,
                               std::vector<TypedEdge> edges, std::vector<std::string> mentions) {
  RoutedGraph g;
  g.query_id_ = std::move(query_id);
  g.base_ = std::move(base);
  g.nodes_ = std::move(nodes);
  g.edges_ = std::move(edges);
  g.mentions_ = std::move(mentions);
  for (const auto& e : g.edges_) {
    if (e.src >= g.nodes_.size() || e.dst >= g.nodes_.size()) {
      throw ValidationError("edge endpoint out of range");
    }
  }
  g.index_nodes();
  return g;
}

// ---------------------------------------------------------------------------
// Lexicon

SubkindLexicon SubkindLexicon::defaults() {
  SubkindLexicon lex;
  for (const char* tag :
       {"low_carb", "low_sugar", "low_calorie", "low_protein", "low_cholesterol",
        "low_saturated_fat", "low_sodium", "high_sodium", "high_protein", "high_calorie",
        "high_sugar", "high_carb", "high_cholesterol", "high_saturated_fat", "high_fat",
        "low_fat", "high_fiber", "low_fiber", "high_potassium", "low_potassium"}) {
    lex.exact[tag] = "nutrition_tag";
  }
  lex.exact["user"] = "user";
  for (const char* cond :
       {"hypertension", "diabetes", "obesity", "opioid misuse", "weight loss/low calorie diet",
        "low fat/low cholesterol diet", "low salt/low sodium diet", "sugar-free/low sugar diet",
        "diabetic diet", "weight gain/muscle building diet", "low carbohydrate diet",
        "high protein diet", "renal/kidney diet"}) {
    lex.exact[cond] = "condition";
  }
  lex.rules = {
      {"has", true, "food", "ingredient"},
      {"contains", true, "food", "ingredient"},
      {"has", true, "user", "habit"},
      {"has habit", true, "user", "habit"},
      {"belongs to", true, "food", "category"},
  };
  return lex;
}

SubkindLexicon SubkindLexicon::from_json_text(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("lexicon: ") + e.what());
  }
  SubkindLexicon lex;
  lex.mentioned = "food";
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    if (key == "exact") {
      for (auto e = it->begin(); e != it->end(); ++e) lex.exact[lower(e.key())] = e->get<std::string>();
    } else if (key == "rules") {
      for (const auto& r : *it) {
        PositionRule rule;
        rule.relation = r.at("relation").get<std::string>();
        rule.node_is_dst = r.value("position", std::string("dst")) == "dst";
        rule.other_subkind = r.value("other", std::string());
        rule.subkind = r.at("subkind").get<std::string>();
        lex.rules.push_back(rule);
      }
    } else if (key == "mentioned") {
      lex.mentioned = it->get<std::string>();
    } else if (key == "fallback") {
      lex.fallback = it->get<std::string>();
    } else {
      throw ConfigError("lexicon: unknown key '" + key + "'");
    }
  }
  return lex;
}

// ---------------------------------------------------------------------------
// Parsing

QueryInstance parse_context_graph(std::string_view record, std::size_t line_no,
                                  const SubkindLexicon& lexicon) {
  json rec;
  try {
    rec = json::parse(record);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid record: ") + e.what(), line_no, e.byte);
  }
  if (!rec.is_object()) throw ParseError("record must be an object", line_no, 0);
  static const std::set<std::string> known = {"id",     "question", "triples", "gold",
                                              "mentions", "signal", "nodes",   "family",
                                              "setting",  "split"};
  for (auto it = rec.begin(); it != rec.end(); ++it) {
    if (!known.count(it.key())) throw ParseError("unknown field '" + it.key() + "'", line_no, 0);
  }

  QueryInstance q;
  try {
    q.id = rec.at("id").get<std::string>();
    q.question = rec.at("question").get<std::string>();
    q.family = optional_string(rec, "family");
    q.setting = optional_string(rec, "setting");
    q.split = optional_string(rec, "split");
  } catch (const json::exception& e) {
    throw ParseError(std::string("missing or mistyped field: ") + e.what(), line_no, 0);
  } catch (const ParseError& e) {
    throw ParseError(e.what(), line_no, 0);
  }
  q.context.record_id = q.id;

  std::vector<bool> explicit_kind;
  const bool explicit_nodes = rec.contains("nodes");
  if (explicit_nodes) {
    const json& nodes = rec["nodes"];
    if (!nodes.is_array()) throw ParseError("'nodes' must be a list", line_no, 0);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const json& n = nodes[i];
      Node node;
      if (n.is_string()) {
        node.id = n.get<std::string>();
      } else if (n.is_object() && n.contains("id") && n["id"].is_string()) {
        node.id = n["id"].get<std::string>();
        if (n.contains("text")) node.text = n["text"].get<std::string>();
        if (n.contains("subkind")) node.subkind = n["subkind"].get<std::string>();
      } else {
        throw ParseError("malformed node entry", line_no, i);
      }
      if (node.text.empty()) node.text = node.id;
      if (q.context.contains(node.id)) {
        throw ValidationError("record '" + q.id + "': duplicate node id '" + node.id + "'");
      }
      explicit_kind.push_back(!node.subkind.empty());
      q.context.nodes.push_back(std::move(node));
    }
  }

  if (rec.contains("triples")) {
    const json& triples = rec["triples"];
    if (!triples.is_array()) throw ParseError("'triples' must be a list", line_no, 0);
    std::set<Triple> seen;
    for (std::size_t i = 0; i < triples.size(); ++i) {
      const json& t = triples[i];
      if (!t.is_array() || t.size() != 3) {
        throw ParseError("triple must have exactly 3 elements", line_no, i);
      }
      for (const auto& part : t) {
        if (!part.is_string()) throw ParseError("triple elements must be strings", line_no, i);
      }
      Triple tr{t[0].get<std::string>(), t[1].get<std::string>(), t[2].get<std::string>()};
      for (const std::string* end : {&tr.src, &tr.dst}) {
        if (q.context.contains(*end)) continue;
        if (explicit_nodes) {
          throw ValidationError("record '" + q.id + "': triple " + std::to_string(i) +
                                " references unknown node '" + *end + "'");
        }
        q.context.nodes.push_back(Node{*end, NodeKind::kEntity, "", *end});
        explicit_kind.push_back(false);
      }
      if (seen.insert(tr).second) q.context.triples.push_back(std::move(tr));
    }
  }

  q.gold = sorted_unique(string_list(rec, "gold", line_no));
  q.mentions = string_list(rec, "mentions", line_no);
  for (const auto& m : q.mentions) {
    if (!q.context.contains(m)) {
      throw ValidationError("record '" + q.id + "': mentioned entity '" + m + "' is not a node");
    }
  }
  if (rec.contains("signal") && !rec["signal"].is_null()) {
    auto sig = sorted_unique(string_list(rec, "signal", line_no));
    for (const auto& s : sig) {
      if (!q.context.contains(s)) {
        throw ValidationError("record '" + q.id + "': signal entity '" + s + "' is not a node");
      }
    }
    q.relevant = std::move(sig);
  }
  infer_subkinds(q.context, q.mentions, explicit_kind, lexicon);
  q.degenerate = q.context.triples.empty();
  return q;
}

std::string serialize_query(const QueryInstance& q) {
  json rec;
  rec["id"] = q.id;
  rec["question"] = q.question;
  json nodes = json::array();
  for (const auto& n : q.context.nodes) {
    json node{{"id", n.id}, {"subkind", n.subkind}};
    if (n.text != n.id) node["text"] = n.text;
    nodes.push_back(std::move(node));
  }
  rec["nodes"] = std::move(nodes);
  json triples = json::array();
  for (const auto& t : q.context.triples) triples.push_back({t.src, t.label, t.dst});
  rec["triples"] = std::move(triples);
  rec["gold"] = q.gold;
  rec["mentions"] = q.mentions;
  if (q.relevant) rec["signal"] = *q.relevant;
  if (!q.family.empty()) rec["family"] = q.family;
  if (!q.setting.empty()) rec["setting"] = q.setting;
  if (!q.split.empty()) rec["split"] = q.split;
  return rec.dump();
}

std::vector<QueryInstance> read_corpus(const std::string& path, const SubkindLexicon& lexicon) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open corpus file '" + path + "'");
  std::vector<QueryInstance> out;
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_context_graph(line, line_no, lexicon));
    if (!ids.insert(out.back().id).second) {
      throw ValidationError("duplicate query id '" + out.back().id + "' at line " +
                            std::to_string(line_no));
    }
  }
  return out;
}

void write_corpus(const std::string& path, const std::vector<QueryInstance>& queries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write corpus file '" + path + "'");
  for (const auto& q : queries) out << serialize_query(q) << '\n';
}

// ---------------------------------------------------------------------------
// Graph operations

RoutedGraph extend_graph(const QueryInstance& q, const std::vector<AgentSpec>& pool) {
  if (pool.empty()) throw ContractError("extend_graph: agent pool is empty");
  std::vector<Node> nodes = q.context.nodes;
  std::vector<TypedEdge> edges;
  std::vector<std::string> warnings;

  const std::size_t n_entities = nodes.size();
  const std::size_t query = n_entities;
  nodes.push_back(Node{RoutedGraph::query_node_id(), NodeKind::kQuery, "", q.question});
  for (const auto& a : pool) {
    nodes.push_back(Node{RoutedGraph::agent_node_id(a.id), NodeKind::kAgent, "", a.id});
  }

  for (const auto& t : q.context.triples) {
    push_edge(edges, *q.context.find(t.src), *q.context.find(t.dst),
              EdgeRelation{RelationKind::kDomain, t.label, false});
  }
  for (const auto& m : q.mentions) {
    push_edge(edges, query, *q.context.find(m), EdgeRelation{RelationKind::kQueryMentions, "", false});
  }
  for (std::size_t k = 0; k < pool.size(); ++k) {
    auto it = pool[k].attends.find(q.id);
    if (it == pool[k].attends.end()) continue;
    for (const auto& e : it->second) {
      const auto idx = q.context.find(e);
      if (!idx) {
        warnings.push_back("agent '" + pool[k].id + "' attends to unknown entity '" + e +
                           "' on query '" + q.id + "'; skipped");
        continue;
      }
      push_edge(edges, query + 1 + k, *idx, EdgeRelation{RelationKind::kAgentAttends, "", false});
    }
  }
  for (std::size_t k = 0; k < pool.size(); ++k) {
    push_edge(edges, query, query + 1 + k, EdgeRelation{RelationKind::kQueryAgent, "", false});
  }

  RoutedGraph g = build_routed_graph(q.context, q.id, std::move(nodes), std::move(edges), q.mentions);
  g.warnings_ = std::move(warnings);
  return g;
}

RoutedGraph induced_subgraph(const RoutedGraph& g, const std::set<std::string>& keep) {
  const auto& nodes = g.nodes();
  std::vector<std::size_t> remap(nodes.size(), static_cast<std::size_t>(-1));
  std::vector<Node> kept;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].kind != NodeKind::kEntity || keep.count(nodes[i].id)) {
      remap[i] = kept.size();
      kept.push_back(nodes[i]);
    }
  }
  std::vector<TypedEdge> edges;
  for (const auto& e : g.edges()) {
    if (remap[e.src] == static_cast<std::size_t>(-1) || remap[e.dst] == static_cast<std::size_t>(-1)) {
      continue;
    }
    edges.push_back({remap[e.src], remap[e.dst], e.relation});
  }
  ContextGraph base;
  base.record_id = g.base().record_id;
  for (const auto& n : g.base().nodes) {
    if (keep.count(n.id)) base.nodes.push_back(n);
  }
  for (const auto& t : g.base().triples) {
    if (keep.count(t.src) && keep.count(t.dst)) base.triples.push_back(t);
  }
  std::vector<std::string> mentions;
  for (const auto& m : g.mentions()) {
    if (keep.count(m)) mentions.push_back(m);
  }
  RoutedGraph out =
      build_routed_graph(std::move(base), g.query_id(), std::move(kept), std::move(edges), std::move(mentions));
  return out;
}

GraphStats graph_stats(const RoutedGraph& g, const std::optional<std::vector<std::string>>& signal) {
  GraphStats s;
  s.entity_nodes = g.entity_count();
  s.entity_edges = g.base().triples.size();
  if (signal) {
    if (s.entity_nodes == 0) {
      s.node_snr = 0.0;
    } else {
      const auto sig = sorted_unique(*signal);
      std::size_t hits = 0;
      for (const auto& n : g.base().nodes) {
        if (std::binary_search(sig.begin(), sig.end(), n.id)) ++hits;
      }
      s.node_snr = 100.0 * static_cast<double>(hits) / static_cast<double>(s.entity_nodes);
    }
  }
  return s;
}

}  // namespace kgroute
