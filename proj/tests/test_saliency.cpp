#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "kgroute/embed.hpp"
#include "kgroute/error.hpp"
#include "kgroute/random.hpp"
#include "kgroute/saliency.hpp"
#include "kgroute/train.hpp"
#include "test_support.hpp"

using namespace kgroute;
using nlohmann::json;

namespace {

std::vector<AgentSpec> pool(std::size_t n) {
  std::vector<AgentSpec> p;
  for (std::size_t i = 0; i < n; ++i) {
    p.push_back(AgentSpec{"agent-" + std::to_string(i), "bb" + std::to_string(i), Strategy::kRaw, "agent", {}});
  }
  return p;
}

struct Fixture {
  RoutedGraph g;
  GraphPlan plan;
  ad::Tensor x;
  ParamStore params;
  std::vector<double> target;
};

Fixture make_fixture(const QueryInstance& q, std::size_t agents, std::uint64_t seed) {
  Fixture f;
  const auto p = pool(agents);
  f.g = extend_graph(q, p);
  f.plan = make_plan(f.g);
  HashEmbedder emb(16, seed);
  std::map<std::string, AgentSpec> pm;
  for (const auto& a : p) pm[a.id] = a;
  f.x = embed_graph(f.g, pm, emb);
  ModelConfig mc;
  mc.hidden = 8;
  mc.layers = 2;
  mc.strict_grid = false;
  f.params = init_params(mc, 16, collect_relations({f.g}), collect_types({f.g}), seed);
  Rng rng(seed);
  std::vector<double> f1;
  for (std::size_t i = 0; i < agents; ++i) f1.push_back(rng.uniform());
  f.target = target_distribution(f1, 0.1);
  return f;
}

// m is mentioned; a is one hop from m, b two hops, c three.
QueryInstance chain_query() {
  QueryInstance q;
  q.id = "chain";
  q.question = "chain";
  q.context.record_id = "chain";
  for (const char* id : {"m", "a", "b", "c"}) q.context.nodes.push_back(Node{id, NodeKind::kEntity, "food", id});
  q.context.triples = {{"m", "has", "a"}, {"a", "has", "b"}, {"b", "has", "c"}};
  q.mentions = {"m"};
  return q;
}

std::set<std::string> as_set(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST(Saliency, AlphaIsAProbabilityVectorOverEntities) {
  const auto q = test::load_bruschetta();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto f = make_fixture(q, 4, seed);
    for (auto mode : {SalienceMode::kOracle, SalienceMode::kSelf}) {
      SalienceOptions o;
      o.mode = mode;
      const auto s = entity_salience(f.g, f.plan, f.x, f.params, o, f.target);
      ASSERT_EQ(s.entities.size(), f.g.entity_count());
      EXPECT_NEAR(std::accumulate(s.alpha.begin(), s.alpha.end(), 0.0), 1.0, 1e-9);
      for (double a : s.alpha) {
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
      }
      EXPECT_EQ(s.mode, mode);
    }
  }
}

TEST(Saliency, InvariantToLossScale) {
  auto f = make_fixture(test::load_bruschetta(), 4, 3);
  SalienceOptions o;
  const auto a = entity_salience(f.g, f.plan, f.x, f.params, o, f.target);
  o.loss_scale = 2.0;
  const auto b = entity_salience(f.g, f.plan, f.x, f.params, o, f.target);
  for (std::size_t i = 0; i < a.alpha.size(); ++i) {
    EXPECT_NEAR(b.raw[i], 2.0 * a.raw[i], 1e-12 * std::max(1.0, a.raw[i]));
    EXPECT_NEAR(b.alpha[i], a.alpha[i], 1e-12);
  }
}

TEST(Saliency, EntityBeyondReachHasZeroRawNorm) {
  auto f = make_fixture(chain_query(), 3, 2);
  for (auto site : {StateSite::kInput, StateSite::kInitial}) {
    SalienceOptions o;
    o.site = site;
    const auto s = entity_salience(f.g, f.plan, f.x, f.params, o, f.target);
    const auto idx = [&](const std::string& id) {
      return std::find(s.entities.begin(), s.entities.end(), id) - s.entities.begin();
    };
    EXPECT_GT(s.raw[idx("m")], 0.0);
    EXPECT_GT(s.raw[idx("a")], 0.0);
    EXPECT_EQ(s.raw[idx("b")], 0.0);
    EXPECT_EQ(s.raw[idx("c")], 0.0);
  }
}

TEST(Saliency, FinalLayerEntityStatesCarryNoGradient) {
  auto f = make_fixture(test::load_bruschetta(), 4, 1);
  SalienceOptions o;
  o.site = StateSite::kFinal;
  const auto s = entity_salience(f.g, f.plan, f.x, f.params, o, f.target);
  for (double r : s.raw) EXPECT_EQ(r, 0.0);
  ASSERT_EQ(s.warnings.size(), 1u);
  for (double a : s.alpha) EXPECT_DOUBLE_EQ(a, 1.0 / static_cast<double>(s.alpha.size()));
}

TEST(Saliency, DeterministicAndOracleNeedsTarget) {
  auto f = make_fixture(test::load_bruschetta(), 4, 9);
  const auto a = entity_salience(f.g, f.plan, f.x, f.params, {}, f.target);
  const auto b = entity_salience(f.g, f.plan, f.x, f.params, {}, f.target);
  EXPECT_EQ(a.raw, b.raw);
  EXPECT_THROW(entity_salience(f.g, f.plan, f.x, f.params, {}), ContractError);
}

TEST(Saliency, ModeAndSiteNamesRoundTrip) {
  for (auto m : {SalienceMode::kOracle, SalienceMode::kSelf}) EXPECT_EQ(parse_salience_mode(to_string(m)), m);
  for (auto s : {StateSite::kInput, StateSite::kInitial, StateSite::kFinal}) {
    EXPECT_EQ(parse_state_site(to_string(s)), s);
  }
  EXPECT_THROW(parse_salience_mode("both"), ConfigError);
}

TEST(Retrieval, BruschettaCaseKeepsExactlyFourEntities) {
  const auto q = test::load_bruschetta();
  const auto g = extend_graph(q, pool(2));
  const json j = json::parse(test::read_fixture("bruschetta_salience.json"));
  std::vector<std::pair<std::string, double>> scores;
  for (const auto& [k, v] : j.items()) scores.emplace_back(k, v.get<double>());
  const auto s = salience_from_scores(g, scores);
  for (bool keep : {true, false}) {
    RetrievalConfig c;
    c.keep_mentions = keep;
    const auto r = retrieve_subgraph(g, s, c);
    EXPECT_EQ(as_set(r.kept), (std::set<std::string>{"user", "Bruschetta", "hypertension", "high_sodium"}));
    EXPECT_EQ(r.graph.agent_ids(), g.agent_ids());
    EXPECT_TRUE(r.warnings.empty());
  }
}

TEST(Retrieval, TinyThresholdIsANoOp) {
  auto f = make_fixture(test::load_bruschetta(), 3, 4);
  std::vector<std::pair<std::string, double>> scores;
  for (std::size_t i = 0; i < f.g.entity_count(); ++i) scores.emplace_back(f.g.nodes()[i].id, 0.04);
  RetrievalConfig c;
  c.tau = 1e-12;
  const auto r = retrieve_subgraph(f.g, salience_from_scores(f.g, scores), c);
  EXPECT_TRUE(r.graph == f.g);
  EXPECT_EQ(r.before.entity_nodes, r.after.entity_nodes);
  EXPECT_DOUBLE_EQ(drop_pct(r.before.entity_nodes, r.after.entity_nodes), 0.0);
}

TEST(Retrieval, ThresholdIsMonotone) {
  const auto q = test::load_bruschetta();
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    auto f = make_fixture(q, 3, seed);
    const auto s = entity_salience(f.g, f.plan, f.x, f.params, {}, f.target);
    std::set<std::string> prev;
    bool first = true;
    for (double tau : {0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.3}) {
      RetrievalConfig c;
      c.tau = tau;
      c.keep_mentions = false;
      const auto kept = as_set(retrieve_subgraph(f.g, s, c).kept);
      if (!first) {
        EXPECT_TRUE(std::includes(prev.begin(), prev.end(), kept.begin(), kept.end())) << "tau " << tau;
      }
      prev = kept;
      first = false;
    }
  }
}

TEST(Retrieval, EmptySelectionFallsBackToTopEntity) {
  const auto q = test::load_bruschetta();
  const auto g = extend_graph(q, pool(2));
  std::vector<std::pair<std::string, double>> scores{{"Bruschetta", 0.6}, {"user", 0.4}};
  RetrievalConfig c;
  c.tau = 0.9;
  c.keep_mentions = false;
  const auto r = retrieve_subgraph(g, salience_from_scores(g, scores), c);
  EXPECT_EQ(r.kept, std::vector<std::string>{"Bruschetta"});
  ASSERT_EQ(r.warnings.size(), 1u);
}

TEST(Retrieval, SalienceMustCoverGraph) {
  const auto q = test::load_bruschetta();
  const auto g = extend_graph(q, pool(2));
  SalienceMap s;
  s.entities = {"user"};
  s.alpha = {1.0};
  s.raw = {1.0};
  EXPECT_THROW(retrieve_subgraph(g, s, {}), ContractError);
}

TEST(RetrievalReport, PercentArithmetic) {
  EXPECT_NEAR(drop_pct(26.60, 7.87), 70.41, 0.005);
  EXPECT_NEAR(raise_pct(16.40, 50.83), 209.94, 0.005);
  EXPECT_DOUBLE_EQ(drop_pct(10, 10), 0.0);
  EXPECT_DOUBLE_EQ(raise_pct(10, 10), 0.0);
}

TEST(RetrievalReport, MeansOverQueries) {
  GraphStats b1{20, 30, 10.0}, a1{5, 4, 60.0}, b2{30, 40, 20.0}, a2{10, 9, 40.0};
  const auto r = retrieval_report({{b1, a1}, {b2, a2}});
  EXPECT_EQ(r.queries, 2u);
  EXPECT_DOUBLE_EQ(r.nodes_before, 25.0);
  EXPECT_DOUBLE_EQ(r.nodes_after, 7.5);
  EXPECT_DOUBLE_EQ(r.node_drop_pct, 70.0);
  EXPECT_DOUBLE_EQ(r.edges_before, 35.0);
  EXPECT_DOUBLE_EQ(*r.snr_before, 15.0);
  EXPECT_DOUBLE_EQ(*r.snr_after, 50.0);
  EXPECT_NEAR(*r.snr_raise_pct, 233.333333, 1e-5);
  const auto table = format_retrieval_table({{"synthetic", r}});
  EXPECT_NE(table.find("233.33"), std::string::npos);
  EXPECT_NE(table.find("70.00"), std::string::npos);
  const auto rec = retrieval_record(r);
  EXPECT_DOUBLE_EQ(rec["snr_raise_pct"].get<double>(), *r.snr_raise_pct);
}

TEST(RetrievalReport, NoSignalMeansNoSnr) {
  const auto r = retrieval_report({{GraphStats{4, 3, std::nullopt}, GraphStats{2, 1, std::nullopt}}});
  EXPECT_FALSE(r.snr_before.has_value());
  EXPECT_EQ(format_retrieval_table({{"x", r}}).find("nan"), std::string::npos);
}

TEST(Saliency, DumpHasOneLinePerEntity) {
  auto f = make_fixture(test::load_bruschetta(), 3, 5);
  const auto s = entity_salience(f.g, f.plan, f.x, f.params, {}, f.target);
  const auto dump = salience_dump("q1", s);
  EXPECT_EQ(static_cast<std::size_t>(std::count(dump.begin(), dump.end(), '\n')), s.entities.size());
  const auto first = json::parse(dump.substr(0, dump.find('\n')));
  EXPECT_EQ(first["query"], "q1");
  EXPECT_EQ(first["entity"], s.entities[0]);
  EXPECT_DOUBLE_EQ(first["alpha"].get<double>(), s.alpha[0]);
}
