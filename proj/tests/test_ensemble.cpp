#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "kgroute/ensemble.hpp"
#include "kgroute/error.hpp"
#include "kgroute/random.hpp"

using namespace kgroute;

namespace {

AgentAnswer ans(const std::string& agent, TagSet tags, const std::string& q = "q") {
  AgentAnswer a;
  a.agent_id = agent;
  a.query_id = q;
  a.tags = std::move(tags);
  return a;
}

RouteDistribution random_dist(Rng& rng, std::size_t n) {
  RouteDistribution d;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    d.agents.push_back("a" + std::to_string(i));
    d.probs.push_back(rng.uniform() + 1e-3);
    sum += d.probs.back();
  }
  for (auto& p : d.probs) p /= sum;
  return d;
}

std::vector<AgentAnswer> random_answers(Rng& rng, const RouteDistribution& d) {
  const char* tags[] = {"t0", "t1", "t2", "t3", "t4"};
  std::vector<AgentAnswer> out;
  for (const auto& a : d.agents) {
    TagSet s;
    for (const char* t : tags) {
      if (rng.bernoulli(0.4)) s.insert(t);
    }
    out.push_back(ans(a, s));
  }
  return out;
}

}  // namespace

TEST(PruneTopk, KeepsLargestInOriginalOrderAndRenormalizes) {
  RouteDistribution d{{"a", "b", "c", "d"}, {0.1, 0.4, 0.2, 0.3}, "ckpt", "q"};
  const auto p = prune_topk(d, 2);
  EXPECT_EQ(p.agents, (std::vector<std::string>{"b", "d"}));
  EXPECT_NEAR(p.probs[0], 4.0 / 7.0, 1e-15);
  EXPECT_NEAR(p.probs[1], 3.0 / 7.0, 1e-15);
  EXPECT_EQ(p.checkpoint, "ckpt");
  EXPECT_EQ(p.query_id, "q");
}

TEST(PruneTopk, TiesGoToLexicallySmallerAgent) {
  RouteDistribution d{{"c", "a", "b"}, {0.25, 0.25, 0.5}, "", ""};
  EXPECT_EQ(prune_topk(d, 2).agents, (std::vector<std::string>{"a", "b"}));
}

TEST(PruneTopk, Properties) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto d = random_dist(rng, 24);
    EXPECT_EQ(prune_topk(d, 24).probs, d.probs);
    EXPECT_EQ(prune_topk(d, 24).agents, d.agents);
    for (std::size_t k : {1u, 5u, 10u, 15u, 20u}) {
      const auto p = prune_topk(d, k);
      ASSERT_EQ(p.agents.size(), k);
      EXPECT_NEAR(std::accumulate(p.probs.begin(), p.probs.end(), 0.0), 1.0, 1e-12);
      // Relative order of kept probabilities is preserved.
      for (std::size_t i = 0; i + 1 < k; ++i) {
        const auto ia = std::find(d.agents.begin(), d.agents.end(), p.agents[i]) - d.agents.begin();
        const auto ib = std::find(d.agents.begin(), d.agents.end(), p.agents[i + 1]) - d.agents.begin();
        EXPECT_LT(ia, ib);
        EXPECT_EQ(d.probs[ia] < d.probs[ib], p.probs[i] < p.probs[i + 1]);
      }
      const auto again = prune_topk(p, k);
      EXPECT_EQ(again.agents, p.agents);
      EXPECT_EQ(again.probs, p.probs);
    }
  }
}

TEST(PruneTopk, RejectsBadK) {
  RouteDistribution d{{"a", "b"}, {0.5, 0.5}, "", ""};
  EXPECT_THROW(prune_topk(d, 0), ContractError);
  EXPECT_THROW(prune_topk(d, 3), ContractError);
}

TEST(RouteDistribution, Validation) {
  EXPECT_THROW((RouteDistribution{{"a"}, {0.9}, "", ""}.validate()), ContractError);
  EXPECT_THROW((RouteDistribution{{"a", "b"}, {1.5, -0.5}, "", ""}.validate()), ContractError);
  EXPECT_THROW((RouteDistribution{{"a"}, {1.0, 0.0}, "", ""}.validate()), ContractError);
  EXPECT_NO_THROW((RouteDistribution{{"a", "b"}, {0.25, 0.75}, "", ""}.validate()));
}

TEST(WeightedVote, BorschtCase) {
  const TagSet gold{"low_sodium", "low_sugar"};
  const TagSet wide{"low_carb", "low_sugar", "low_calorie", "low_protein", "low_cholesterol", "low_saturated_fat",
                    "low_sodium"};
  RouteDistribution d;
  const std::vector<std::pair<std::string, double>> route{
      {"Qwen2.5-7B-Instruct::raw", 0.095538996}, {"Qwen2.5-7B-Instruct::cot", 0.086759798},
      {"Qwen2.5-7B-Instruct::summary", 0.061009243}, {"Mistral-7B-Instruct::mad", 0.051758543},
      {"Llama-3.2-3B::cot", 0.020628655},         {"GPT-4o-mini::mad", 0.019520836},
      {"GPT-4o-mini::sc", 0.018208018},           {"GPT-4o-mini::cot", 0.011033830}};
  std::vector<AgentAnswer> answers;
  double total = 0.0;
  for (const auto& [agent, p] : route) total += p;
  for (std::size_t i = 0; i < route.size(); ++i) {
    d.agents.push_back(route[i].first);
    d.probs.push_back(route[i].second / total);
    answers.push_back(ans(route[i].first, i < 5 ? gold : wide));
  }
  const auto v = weighted_vote(answers, d);
  EXPECT_EQ(v.tags, gold);
  const double wide_mass = (0.019520836 + 0.018208018 + 0.011033830) / total;
  for (const auto& r : v.trace) {
    EXPECT_NEAR(r.score, gold.count(r.tag) ? 1.0 : wide_mass, 1e-12) << r.tag;
    EXPECT_EQ(r.included, gold.count(r.tag) == 1);
  }
  EXPECT_NEAR(wide_mass, 0.1338, 5e-5);
}

TEST(WeightedVote, ThresholdTieIsIncluded) {
  RouteDistribution d{{"a", "b"}, {0.5, 0.5}, "", "q"};
  const auto v = weighted_vote({ans("a", {"x"}), ans("b", {"y"})}, d);
  EXPECT_EQ(v.tags, (TagSet{"x", "y"}));
}

TEST(WeightedVote, IdenticalAnswersWinForAnyDistribution) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto d = random_dist(rng, 6);
    std::vector<AgentAnswer> answers;
    for (const auto& a : d.agents) answers.push_back(ans(a, {"low_fat", "high_fiber"}));
    for (double theta : {0.1, 0.5, 0.9, 1.0}) {
      VoteConfig c;
      c.theta = theta;
      EXPECT_EQ(weighted_vote(answers, d, c).tags, (TagSet{"low_fat", "high_fiber"}));
    }
  }
}

TEST(WeightedVote, MonotoneInAnAgentsWeight) {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const auto d = random_dist(rng, 5);
    const auto answers = random_answers(rng, d);
    const std::size_t who = rng.below(5);
    auto heavier = d;
    heavier.probs[who] += rng.uniform(0.0, 2.0);
    const double sum = std::accumulate(heavier.probs.begin(), heavier.probs.end(), 0.0);
    for (auto& p : heavier.probs) p /= sum;
    const auto before = weighted_vote(answers, d).tags;
    const auto after = weighted_vote(answers, heavier).tags;
    for (const auto& t : answers[who].tags) {
      if (before.count(t)) EXPECT_TRUE(after.count(t)) << t;
    }
  }
}

TEST(WeightedVote, MissingMassIsRedistributed) {
  RouteDistribution d{{"a", "b", "c"}, {0.4, 0.2, 0.4}, "", "q"};
  const std::vector<AgentAnswer> answers{ans("a", {"x"}), ans("b", {"y"})};
  const auto v = weighted_vote(answers, d);
  EXPECT_EQ(v.missing, std::vector<std::string>{"c"});
  EXPECT_EQ(v.tags, (TagSet{"x"}));
  EXPECT_NEAR(v.trace[0].score, 2.0 / 3.0, 1e-15);
  VoteConfig empty;
  empty.missing_as_empty = true;
  EXPECT_TRUE(weighted_vote(answers, d, empty).tags.empty());
}

TEST(WeightedVote, TopkAndOtherQueries) {
  RouteDistribution d{{"a", "b", "c"}, {0.5, 0.3, 0.2}, "", "q"};
  const std::vector<AgentAnswer> answers{ans("a", {"x"}), ans("b", {"y"}), ans("c", {"y"}),
                                         ans("a", {"z"}, "other")};
  EXPECT_EQ(weighted_vote(answers, d).tags, (TagSet{"x", "y"}));
  VoteConfig c;
  c.k = 1;
  EXPECT_EQ(weighted_vote(answers, d, c).tags, (TagSet{"x"}));
}

TEST(WeightedVote, DuplicateAnswersRejected) {
  RouteDistribution d{{"a"}, {1.0}, "", "q"};
  EXPECT_THROW(weighted_vote({ans("a", {"x"}), ans("a", {"y"})}, d), ValidationError);
}

TEST(MajorityVote, EqualsUniformWeightedVoteExactly) {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(24);
    const auto d = random_dist(rng, n);
    const auto answers = random_answers(rng, d);
    VoteConfig c;
    c.theta = 0.5;
    const auto uniform = weighted_vote(answers, RouteDistribution::uniform(d.agents), c);
    const auto majority = majority_vote(answers);
    EXPECT_EQ(majority.tags, uniform.tags);
    ASSERT_EQ(majority.trace.size(), uniform.trace.size());
    for (std::size_t i = 0; i < uniform.trace.size(); ++i) {
      EXPECT_EQ(majority.trace[i].score, uniform.trace[i].score);
    }
  }
}

TEST(VoteTrace, Record) {
  RouteDistribution d{{"a", "b"}, {0.7, 0.3}, "", "q"};
  const auto v = weighted_vote({ans("a", {"x"}), ans("b", {"y"})}, d);
  const auto j = vote_trace_record("q", v);
  EXPECT_EQ(j["prediction"], nlohmann::json({"x"}));
  EXPECT_EQ(j["trace"].size(), 2u);
  EXPECT_EQ(j["trace"][1]["tag"], "y");
  EXPECT_FALSE(j["trace"][1]["included"].get<bool>());
}

TEST(Oracle, SingleAgentPoolSelectsItself) {
  PerformanceRecord perf;
  perf.f1["q1"]["only"] = 0.5;
  perf.f1["q2"]["only"] = 1.0;
  const std::map<std::string, std::string> setting{{"q1", "s"}, {"q2", "s"}};
  const auto o = best_agent_oracle(perf, setting, OracleScope::kPerSetting);
  EXPECT_EQ(o.agent.at("s"), "only");
  EXPECT_DOUBLE_EQ(o.mean_f1, 0.75);
}

TEST(Oracle, PerQueryDominatesPerSettingDominatesUniformAverage) {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    PerformanceRecord perf;
    std::map<std::string, std::string> setting;
    double uniform = 0.0;
    std::size_t n = 0;
    for (int q = 0; q < 20; ++q) {
      const std::string id = "q" + std::to_string(q);
      setting[id] = q % 3 == 0 ? "sparse" : "standard";
      for (int a = 0; a < 6; ++a) {
        const double f = rng.uniform();
        perf.f1[id]["a" + std::to_string(a)] = f;
        uniform += f;
        ++n;
      }
    }
    const auto per_setting = best_agent_oracle(perf, setting, OracleScope::kPerSetting);
    const auto per_query = best_agent_oracle(perf, setting, OracleScope::kPerQuery);
    EXPECT_GE(per_query.mean_f1, per_setting.mean_f1);
    EXPECT_GE(per_setting.mean_f1, uniform / static_cast<double>(n));
  }
}

TEST(Oracle, TiesGoToLexicallySmallerAgent) {
  PerformanceRecord perf;
  perf.f1["q"]["b"] = 1.0;
  perf.f1["q"]["a"] = 1.0;
  const auto o = best_agent_oracle(perf, {{"q", "s"}}, OracleScope::kPerQuery);
  EXPECT_EQ(o.agent.at("q"), "a");
}

TEST(Oracle, MissingSettingIsAnError) {
  PerformanceRecord perf;
  perf.f1["q"]["a"] = 1.0;
  EXPECT_THROW(best_agent_oracle(perf, {}, OracleScope::kPerSetting), ValidationError);
}

TEST(PruneTopk, Examples) {
  RouteDistribution d{{"a", "b", "c"}, {0.5, 0.3, 0.2}, "", ""};
  const auto two = prune_topk(d, 2);
  EXPECT_NEAR(two.probs[0], 0.625, 1e-15);
  EXPECT_NEAR(two.probs[1], 0.375, 1e-15);
  const auto one = prune_topk(d, 1);
  EXPECT_EQ(one.agents, std::vector<std::string>{"a"});
  EXPECT_EQ(one.probs, std::vector<double>{1.0});
}

TEST(WeightedVote, Examples) {
  RouteDistribution d{{"a", "b"}, {0.7, 0.3}, "", "q"};
  EXPECT_EQ(weighted_vote({ans("a", {"low_sugar"}), ans("b", {"low_sugar", "high_sodium"})}, d).tags,
            TagSet{"low_sugar"});
  RouteDistribution single{{"a"}, {1.0}, "", "q"};
  EXPECT_EQ(weighted_vote({ans("a", {"x", "y"})}, single).tags, (TagSet{"x", "y"}));
  EXPECT_TRUE(weighted_vote({ans("a", {}), ans("b", {})}, d).tags.empty());
}

TEST(MajorityVote, Examples) {
  EXPECT_EQ(majority_vote({ans("a", {"x"}), ans("b", {"x"}), ans("c", {"x"})}).tags, TagSet{"x"});
  EXPECT_EQ(majority_vote({ans("a", {"x"}), ans("b", {"x", "y"}), ans("c", {"z"})}).tags, TagSet{"x"});
}
