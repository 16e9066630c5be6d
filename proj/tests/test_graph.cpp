#include <algorithm>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "kgroute/error.hpp"
#include "kgroute/graph.hpp"
#include "kgroute/random.hpp"
#include "test_support.hpp"

using namespace kgroute;

namespace {

std::vector<AgentSpec> pool_of(std::size_t n) {
  std::vector<AgentSpec> pool;
  for (std::size_t i = 0; i < n; ++i) {
    AgentSpec a;
    a.id = "a" + std::to_string(i);
    a.backbone = "bb" + std::to_string(i / 6);
    a.strategy = kAllStrategies[i % 6];
    a.description = "agent " + std::to_string(i);
    pool.push_back(a);
  }
  return pool;
}

std::size_t count_relation(const RoutedGraph& g, RelationKind kind, bool reverse) {
  return static_cast<std::size_t>(std::count_if(g.edges().begin(), g.edges().end(), [&](const TypedEdge& e) {
    return e.relation.kind == kind && e.relation.reverse == reverse;
  }));
}

// Random record over n_nodes ids: a chain guarantees every id appears, plus
// n_edges random triples over three labels.
QueryInstance random_query(Rng& rng, std::size_t n_nodes, std::size_t n_edges) {
  nlohmann::json triples = nlohmann::json::array();
  for (std::size_t i = 0; i + 1 < n_nodes; ++i) {
    triples.push_back({"n" + std::to_string(i), "link", "n" + std::to_string(i + 1)});
  }
  for (std::size_t e = 0; e < n_edges; ++e) {
    triples.push_back({"n" + std::to_string(rng.below(n_nodes)), "rel" + std::to_string(rng.below(3)),
                       "n" + std::to_string(rng.below(n_nodes))});
  }
  const nlohmann::json rec{{"id", "r"}, {"question", "q?"}, {"triples", triples}, {"mentions", {"n0"}}};
  return parse_context_graph(rec.dump());
}

}  // namespace

TEST(Graph, BruschettaParsesTo25NodesAnd30Edges) {
  const auto q = test::load_bruschetta();
  EXPECT_EQ(q.context.nodes.size(), 25u);
  EXPECT_EQ(q.context.triples.size(), 30u);
  EXPECT_FALSE(q.degenerate);
}

TEST(Graph, BruschettaSubkinds) {
  const auto q = test::load_bruschetta();
  auto sub = [&](const std::string& id) { return q.context.nodes[*q.context.find(id)].subkind; };
  EXPECT_EQ(sub("Bruschetta"), "food");
  EXPECT_EQ(sub("user"), "user");
  EXPECT_EQ(sub("hypertension"), "condition");
  EXPECT_EQ(sub("high_sodium"), "nutrition_tag");
  EXPECT_EQ(sub("Olive oil"), "ingredient");
  EXPECT_EQ(sub("Eats lots of fish"), "habit");
  EXPECT_EQ(sub("Vegetable sandwiches/burgers"), "category");
}

TEST(Graph, EmptyTripleListIsDegenerateNotRejected) {
  const auto q = parse_context_graph(R"({"id":"e","question":"anything?","triples":[]})");
  EXPECT_TRUE(q.degenerate);
  EXPECT_TRUE(q.context.nodes.empty());
}

TEST(Graph, RoundTripIsIdentity) {
  const auto q = test::load_bruschetta();
  const auto again = parse_context_graph(serialize_query(q));
  EXPECT_EQ(q, again);
  EXPECT_EQ(serialize_query(again), serialize_query(q));
}

TEST(Graph, RoundTripRandomGraphs) {
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto q = random_query(rng, 2 + rng.below(15), rng.below(30));
    EXPECT_EQ(parse_context_graph(serialize_query(q)), q);
  }
}

TEST(Graph, UnknownRelationLabelsPreserved) {
  const auto q = parse_context_graph(R"({"id":"x","question":"?","triples":[["a","frobnicates","b"]]})");
  EXPECT_EQ(q.context.triples.front().label, "frobnicates");
  EXPECT_EQ(q.context.nodes[0].subkind, "entity");
}

TEST(Graph, MalformedTripleReportsLineAndOffset) {
  try {
    parse_context_graph(R"({"id":"x","question":"?","triples":[["a","r","b"],["a","r"]]})", 7);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 7u);
    EXPECT_EQ(e.offset(), 1u);
  }
}

TEST(Graph, DanglingMentionIsValidationError) {
  EXPECT_THROW(
      parse_context_graph(R"({"id":"x","question":"?","triples":[["a","r","b"]],"mentions":["zzz"]})"),
      ValidationError);
  EXPECT_THROW(
      parse_context_graph(R"({"id":"x","question":"?","triples":[["a","r","b"]],"signal":["zzz"]})"),
      ValidationError);
}

TEST(Graph, DuplicateTriplesRemoved) {
  const auto q = parse_context_graph(R"({"id":"x","question":"?","triples":[["a","r","b"],["a","r","b"]]})");
  EXPECT_EQ(q.context.triples.size(), 1u);
}

TEST(Graph, ExtendArithmetic) {
  auto q = test::load_bruschetta();
  q.mentions = {"user", "Bruschetta", "hypertension"};
  const auto g = extend_graph(q, pool_of(24));
  EXPECT_EQ(g.nodes().size(), 50u);
  EXPECT_EQ(g.edges().size(), 2u * (30 + 3 + 0 + 24));
  EXPECT_EQ(count_relation(g, RelationKind::kQueryAgent, false), 24u);
  EXPECT_EQ(count_relation(g, RelationKind::kQueryAgent, true), 24u);
  EXPECT_EQ(count_relation(g, RelationKind::kQueryMentions, false), 3u);
  EXPECT_FALSE(g.degenerate());
}

TEST(Graph, SingleAgentPoolHasOneQueryAgentEdge) {
  const auto g = extend_graph(test::load_bruschetta(), pool_of(1));
  EXPECT_EQ(count_relation(g, RelationKind::kQueryAgent, false), 1u);
  EXPECT_EQ(g.agent_indices().size(), 1u);
}

TEST(Graph, ExtendIsDeterministicAndDoesNotMutateInput) {
  const auto q = test::load_bruschetta();
  const auto copy = q;
  const auto a = extend_graph(q, pool_of(24));
  const auto b = extend_graph(q, pool_of(24));
  EXPECT_EQ(a, b);
  EXPECT_EQ(q, copy);
}

TEST(Graph, EmptyPoolIsContractError) {
  EXPECT_THROW(extend_graph(test::load_bruschetta(), {}), ContractError);
}

TEST(Graph, OutOfGraphAttendsAreSkippedWithWarning) {
  auto pool = pool_of(2);
  pool[0].attends["bruschetta"] = {"user", "not-a-node"};
  const auto g = extend_graph(test::load_bruschetta(), pool);
  EXPECT_EQ(count_relation(g, RelationKind::kAgentAttends, false), 1u);
  ASSERT_EQ(g.warnings().size(), 1u);
  EXPECT_NE(g.warnings().front().find("not-a-node"), std::string::npos);
}

TEST(Graph, EdgeEndpointsRespectRelationKinds) {
  auto pool = pool_of(3);
  pool[1].attends["bruschetta"] = {"hypertension"};
  const auto g = extend_graph(test::load_bruschetta(), pool);
  for (const auto& e : g.edges()) {
    const auto& s = g.nodes()[e.src];
    const auto& d = g.nodes()[e.dst];
    const auto& from = e.relation.reverse ? d : s;
    const auto& to = e.relation.reverse ? s : d;
    switch (e.relation.kind) {
      case RelationKind::kQueryMentions:
        EXPECT_TRUE(from.kind == NodeKind::kQuery && to.kind == NodeKind::kEntity);
        break;
      case RelationKind::kAgentAttends:
        EXPECT_TRUE(from.kind == NodeKind::kAgent && to.kind == NodeKind::kEntity);
        break;
      case RelationKind::kQueryAgent:
        EXPECT_TRUE(from.kind == NodeKind::kQuery && to.kind == NodeKind::kAgent);
        break;
      case RelationKind::kDomain:
        EXPECT_TRUE(from.kind == NodeKind::kEntity && to.kind == NodeKind::kEntity);
        break;
    }
  }
}

TEST(Graph, NodeCountClosedFormOverRandomGraphs) {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const auto q = random_query(rng, 2 + rng.below(20), rng.below(40));
    const std::size_t pool_size = 1 + rng.below(10);
    const auto g = extend_graph(q, pool_of(pool_size));
    EXPECT_EQ(g.nodes().size(), q.context.nodes.size() + pool_size + 1);
    EXPECT_EQ(g.edges().size(), 2 * (q.context.triples.size() + q.mentions.size() + pool_size));
  }
}

TEST(Graph, InducedSubgraphIdentity) {
  const auto g = extend_graph(test::load_bruschetta(), pool_of(4));
  std::set<std::string> all;
  for (const auto& n : g.nodes()) all.insert(n.id);
  EXPECT_EQ(induced_subgraph(g, all), g);
}

TEST(Graph, InducedSubgraphBruschettaCase) {
  const auto q = test::load_bruschetta();
  const auto g = extend_graph(q, pool_of(4));
  const std::set<std::string> keep = {"user", "Bruschetta", "hypertension", "high_sodium"};
  const auto sub = induced_subgraph(g, keep);
  // Oracle: triples of the raw record with both endpoints kept.
  std::vector<Triple> expect;
  for (const auto& t : q.context.triples) {
    if (keep.count(t.src) && keep.count(t.dst)) expect.push_back(t);
  }
  EXPECT_EQ(expect.size(), 3u);
  EXPECT_EQ(sub.base().triples, expect);
  EXPECT_EQ(sub.entity_count(), 4u);
  std::size_t domain = 0;
  for (const auto& e : sub.edges()) domain += e.relation.kind == RelationKind::kDomain && !e.relation.reverse;
  EXPECT_EQ(domain, 3u);
}

TEST(Graph, InducedSubgraphEmptyKeep) {
  const auto g = extend_graph(test::load_bruschetta(), pool_of(4));
  const auto sub = induced_subgraph(g, {});
  EXPECT_EQ(sub.nodes().size(), 5u);
  for (const auto& e : sub.edges()) EXPECT_EQ(e.relation.kind, RelationKind::kQueryAgent);
  EXPECT_EQ(sub.edges().size(), 8u);
}

TEST(Graph, InducedSubgraphIsMonotone) {
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const auto q = random_query(rng, 3 + rng.below(15), rng.below(30));
    const auto g = extend_graph(q, pool_of(3));
    std::set<std::string> k1, k2;
    for (const auto& n : q.context.nodes) {
      const bool in2 = rng.bernoulli(0.6);
      if (in2) k2.insert(n.id);
      if (in2 && rng.bernoulli(0.5)) k1.insert(n.id);
    }
    const auto s1 = induced_subgraph(g, k1), s2 = induced_subgraph(g, k2);
    std::set<std::tuple<std::string, std::string, std::string>> e2;
    for (const auto& e : s2.edges()) e2.insert({s2.nodes()[e.src].id, e.relation.key(), s2.nodes()[e.dst].id});
    for (const auto& e : s1.edges()) {
      EXPECT_TRUE(e2.count({s1.nodes()[e.src].id, e.relation.key(), s1.nodes()[e.dst].id}));
    }
  }
}

TEST(Graph, StatsSnr) {
  const auto q = test::load_bruschetta();
  const auto g = extend_graph(q, pool_of(4));
  const auto st = graph_stats(g, q.relevant);
  EXPECT_EQ(st.entity_nodes, 25u);
  EXPECT_EQ(st.entity_edges, 30u);
  ASSERT_TRUE(st.node_snr.has_value());
  EXPECT_NEAR(*st.node_snr, 16.0, 1e-12);
  const auto sub = induced_subgraph(g, {q.relevant->begin(), q.relevant->end()});
  EXPECT_NEAR(*graph_stats(sub, q.relevant).node_snr, 100.0, 1e-12);
  EXPECT_FALSE(graph_stats(g).node_snr.has_value());
}

TEST(Graph, SnrBoundsProperty) {
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    const auto q = random_query(rng, 2 + rng.below(15), rng.below(20));
    const auto g = extend_graph(q, pool_of(2));
    std::vector<std::string> signal;
    std::set<std::string> keep;
    for (const auto& n : q.context.nodes) {
      if (rng.bernoulli(0.3)) signal.push_back(n.id);
      if (rng.bernoulli(0.5)) keep.insert(n.id);
    }
    const auto sub = induced_subgraph(g, keep);
    const auto st = graph_stats(sub, signal);
    ASSERT_TRUE(st.node_snr.has_value());
    EXPECT_GE(*st.node_snr, 0.0);
    EXPECT_LE(*st.node_snr, 100.0);
    const bool subset = std::all_of(keep.begin(), keep.end(), [&](const std::string& id) {
      return std::find(signal.begin(), signal.end(), id) != signal.end();
    });
    if (!keep.empty()) EXPECT_EQ(*st.node_snr == 100.0, subset);
  }
}

TEST(Graph, PoolValidationRejectsDuplicatePairs) {
  auto pool = pool_of(2);
  pool[1].backbone = pool[0].backbone;
  pool[1].strategy = pool[0].strategy;
  EXPECT_THROW(validate_pool(pool), ValidationError);
}
