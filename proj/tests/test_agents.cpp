#include <algorithm>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "kgroute/agents.hpp"
#include "kgroute/error.hpp"
#include "kgroute/metrics.hpp"
#include "test_support.hpp"

using namespace kgroute;

namespace {

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

QueryInstance family_query(const std::string& id, const std::string& family, std::vector<std::string> gold) {
  QueryInstance q;
  q.id = id;
  q.question = id;
  q.family = family;
  q.gold = std::move(gold);
  q.context.record_id = id;
  return q;
}

SyntheticAgentProfile profile(const std::string& id, double hit, double flip) {
  SyntheticAgentProfile p;
  p.agent_id = id;
  p.competence["diabetes"] = hit;
  p.flip = flip;
  return p;
}

const std::vector<std::string> kVocab{"high_fiber", "high_protein", "high_sodium", "low_calorie",
                                      "low_carb",   "low_fat",      "low_sodium",  "low_sugar"};

}  // namespace

TEST(Linearize, BruschettaRendersThirtyTriples) {
  const auto q = test::load_bruschetta();
  const auto text = linearize_graph(q.context);
  EXPECT_EQ(line_count(text), 30u);
  EXPECT_NE(text.find("['Bruschetta', 'belongs to', 'high_sodium']"), std::string::npos);
  EXPECT_EQ(text, linearize_graph(q.context));
}

TEST(Linearize, RoutedGraphOmitsScaffolding) {
  const auto q = test::load_bruschetta();
  const auto g = extend_graph(q, {AgentSpec{"a::raw", "a", Strategy::kRaw, "", {}}});
  EXPECT_EQ(linearize_graph(g), linearize_graph(q.context));
  EXPECT_EQ(linearize_graph(g).find("a::raw"), std::string::npos);
}

TEST(Linearize, SortedAndEmpty) {
  ContextGraph g;
  EXPECT_EQ(linearize_graph(g), "");
  g.nodes = {Node{"b", NodeKind::kEntity, "food", "b"}, Node{"a", NodeKind::kEntity, "food", "a"}};
  g.triples = {Triple{"b", "has", "a"}, Triple{"a", "has", "b"}};
  EXPECT_EQ(linearize_graph(g), "['a', 'has', 'b']\n['b', 'has', 'a']\n");
}

TEST(Simulate, NoiselessLimits) {
  const auto q = family_query("q", "diabetes", {"low_carb", "low_sugar"});
  const auto perfect = simulate_answer(profile("a", 1.0, 0.0), q, q.context, kVocab, 1);
  EXPECT_EQ(perfect.tags, (TagSet{"low_carb", "low_sugar"}));
  const auto silent = simulate_answer(profile("a", 0.0, 0.0), q, q.context, kVocab, 1);
  EXPECT_TRUE(silent.tags.empty());
  EXPECT_EQ(silent.agent_id, "a");
  EXPECT_EQ(silent.query_id, "q");
}

TEST(Simulate, PureFunctionOfInputs) {
  const auto q = family_query("q7", "diabetes", {"low_carb", "low_sugar"});
  const auto p = profile("a", 0.5, 0.3);
  const auto first = simulate_answer(p, q, q.context, kVocab, 9);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(simulate_answer(p, q, q.context, kVocab, 9), first);
  bool differs = false;
  for (std::uint64_t s = 10; s < 30 && !differs; ++s) differs = simulate_answer(p, q, q.context, kVocab, s).tags != first.tags;
  EXPECT_TRUE(differs);
}

TEST(Simulate, MonteCarloRecallAndFlipRate) {
  const auto p = profile("a", 0.9, 0.02);
  const std::vector<std::string> gold{"high_fiber", "low_calorie", "low_carb", "low_sugar"};
  std::size_t hits = 0, flips = 0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) {
    const auto q = family_query("q" + std::to_string(i), "diabetes", gold);
    const auto a = simulate_answer(p, q, q.context, kVocab, 3);
    for (const auto& t : a.tags) (std::count(gold.begin(), gold.end(), t) ? hits : flips)++;
  }
  const double recall = static_cast<double>(hits) / (4.0 * trials);
  const double flip = static_cast<double>(flips) / (4.0 * trials);
  EXPECT_NEAR(recall, 0.9, 0.02);
  EXPECT_NEAR(flip, 0.02, 0.005);
}

TEST(Simulate, UnknownFamilyIsAConfigError) {
  const auto q = family_query("q", "renal", {"low_protein"});
  EXPECT_THROW(simulate_answer(profile("a", 0.9, 0.0), q, q.context, kVocab, 1), ConfigError);
}

TEST(Profile, EffectiveHitClampsAndNeverRisesWithNoise) {
  auto p = profile("a", 0.9, 0.0);
  p.sensitivity = 0.05;
  p.budget = 6;
  EXPECT_DOUBLE_EQ(p.effective_hit("diabetes", 0), 0.9);
  EXPECT_DOUBLE_EQ(p.effective_hit("diabetes", 6), 0.9);
  EXPECT_NEAR(p.effective_hit("diabetes", 10), 0.7, 1e-12);
  EXPECT_EQ(p.effective_hit("diabetes", 100), 0.0);
  double prev = 1.0;
  for (std::size_t n = 0; n < 40; ++n) {
    const double h = p.effective_hit("diabetes", n);
    EXPECT_LE(h, prev);
    EXPECT_GE(h, 0.0);
    prev = h;
  }
  p.competence["diabetes"] = 1.5;
  EXPECT_EQ(p.effective_hit("diabetes", 0), 1.0);
}

TEST(Profile, NoiseCountUsesRelevantSet) {
  auto q = test::load_bruschetta();
  q.relevant.reset();
  EXPECT_EQ(noise_entity_count(q, q.context), 0u);
  q.relevant = std::vector<std::string>{"Bruschetta", "high_sodium", "hypertension", "user"};
  EXPECT_EQ(noise_entity_count(q, q.context), q.context.nodes.size() - 4);
}

TEST(Profile, SerializationRoundTrip) {
  auto p = profile("x::cot", 0.9, 0.02);
  p.competence["renal"] = 0.4;
  p.sensitivity = 0.05;
  p.budget = 3;
  const auto back = parse_profiles(serialize_profiles({p, profile("y::raw", 0.1, 0.3)}));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].agent_id, "x::cot");
  EXPECT_EQ(back[0].competence, p.competence);
  EXPECT_EQ(back[0].sensitivity, 0.05);
  EXPECT_EQ(back[0].budget, 3u);
  EXPECT_EQ(back[1].flip, 0.3);
}

TEST(Scenario, ShapeAndDeterminism) {
  const auto s = generate_scenario(ScenarioConfig{});
  EXPECT_EQ(s.pool.size(), 24u);
  EXPECT_EQ(s.profiles.size(), 24u);
  EXPECT_EQ(s.queries.size(), 600u);
  EXPECT_EQ(s.experts.size(), 2u);
  EXPECT_TRUE(std::is_sorted(s.vocabulary.begin(), s.vocabulary.end()));
  std::map<std::string, std::size_t> splits;
  for (const auto& q : s.queries) {
    ++splits[q.split];
    EXPECT_TRUE(std::is_sorted(q.gold.begin(), q.gold.end()));
    for (const auto& t : q.gold) EXPECT_TRUE(std::binary_search(s.vocabulary.begin(), s.vocabulary.end(), t));
  }
  EXPECT_EQ(splits["test"], 200u);
  EXPECT_EQ(splits["train"] + splits["val"], 400u);
  EXPECT_EQ(splits["val"], 80u);
  const auto again = generate_scenario(ScenarioConfig{});
  EXPECT_EQ(again.queries, s.queries);
  EXPECT_EQ(again.experts, s.experts);
}

TEST(Scenario, InvalidConfigRejected) {
  ScenarioConfig c;
  c.families = 5;
  EXPECT_THROW(generate_scenario(c), ConfigError);
  c = ScenarioConfig{};
  c.noisy_agents = 30;
  EXPECT_THROW(generate_scenario(c), ConfigError);
}

TEST(Scenario, PlantedExpertLeadsEveryFamilyByAtLeastPointTwo) {
  const auto s = generate_scenario(ScenarioConfig{});
  std::map<std::string, std::map<std::string, double>> sum;
  std::map<std::string, std::size_t> count;
  for (const auto& q : s.queries) {
    if (q.split == "test") continue;
    ++count[q.family];
    const TagSet gold(q.gold.begin(), q.gold.end());
    for (const auto& p : s.profiles) {
      sum[q.family][p.agent_id] += f1_score(simulate_answer(p, q, q.context, s.vocabulary, 1).tags, gold);
    }
  }
  for (const auto& [family, expert] : s.experts) {
    ASSERT_GE(count[family], 200u);
    const double n = static_cast<double>(count[family]);
    const double lead = sum[family][expert] / n;
    for (const auto& [agent, total] : sum[family]) {
      if (agent != expert) EXPECT_GE(lead - total / n, 0.2) << family << " " << agent;
    }
  }
}

TEST(Scenario, NoiseSensitiveAgentsDoWorseOnLargerContexts) {
  ScenarioConfig c;
  c.noise_sensitive = true;
  const auto s = generate_scenario(c);
  const auto& q = s.queries.front();
  ASSERT_TRUE(q.relevant.has_value());
  ContextGraph signal_only = q.context;
  std::erase_if(signal_only.nodes, [&](const Node& n) {
    return !std::binary_search(q.relevant->begin(), q.relevant->end(), n.id);
  });
  for (const auto& p : s.profiles) {
    EXPECT_LE(p.effective_hit(q.family, noise_entity_count(q, q.context)),
              p.effective_hit(q.family, noise_entity_count(q, signal_only)));
  }
  EXPECT_GT(noise_entity_count(q, q.context), c.budget);
  EXPECT_EQ(noise_entity_count(q, signal_only), 0u);
}

TEST(Score, Examples) {
  const std::map<std::string, TagSet> gold{{"q", {"a", "b"}}};
  auto answer = [](const std::string& agent, TagSet tags) {
    AgentAnswer a;
    a.agent_id = agent;
    a.query_id = "q";
    a.tags = std::move(tags);
    return a;
  };
  const auto perf = score_agent_answers({answer("perfect", {"a", "b"}), answer("empty", {}), answer("half", {"a"})},
                                        gold, {"empty", "half", "missing", "perfect"});
  EXPECT_EQ(perf.at("q", "perfect"), 1.0);
  EXPECT_EQ(perf.at("q", "empty"), 0.0);
  EXPECT_NEAR(perf.at("q", "half"), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(perf.at("q", "missing"), 0.0);
  EXPECT_TRUE(perf.flagged.count({"q", "missing"}));
  EXPECT_FALSE(perf.flagged.count({"q", "empty"}));
}
