#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "kgroute/error.hpp"
#include "kgroute/metrics.hpp"
#include "kgroute/random.hpp"
#include "test_support.hpp"

using namespace kgroute;

namespace {

const std::vector<std::string> kTags{"high_sodium", "low_carb", "low_fat", "low_sodium", "low_sugar"};

TagSet random_tags(Rng& rng, double p) {
  TagSet s;
  for (const auto& t : kTags) {
    if (rng.bernoulli(p)) s.insert(t);
  }
  return s;
}

GoldSet random_gold(Rng& rng, int n) {
  GoldSet g;
  const char* settings[] = {"sparse", "standard", "complex"};
  for (int i = 0; i < n; ++i) {
    TagSet t = random_tags(rng, 0.4);
    if (t.empty()) t.insert("low_fat");
    g["q" + std::to_string(i)] = GoldEntry{t, settings[i % 3]};
  }
  return g;
}

std::map<std::string, TagSet> random_predictions(Rng& rng, const GoldSet& gold) {
  std::map<std::string, TagSet> p;
  for (const auto& [id, entry] : gold) p[id] = random_tags(rng, 0.5);
  return p;
}

// Compares against tests/fixtures/<name>; KGROUTE_UPDATE_GOLDEN=1 rewrites it.
void expect_golden(const std::string& name, const std::string& actual) {
  if (std::getenv("KGROUTE_UPDATE_GOLDEN")) {
    std::ofstream(test::fixture_path(name), std::ios::binary) << actual;
  }
  EXPECT_EQ(actual, test::read_fixture(name));
}

// Fixed three-query, two-method input for the table fixtures.
GoldSet fixed_gold() {
  return {{"a", {{"low_carb", "low_sugar"}, "sparse"}},
          {"b", {{"high_sodium"}, "standard"}},
          {"c", {{"low_fat", "low_sodium", "low_sugar"}, "standard"}}};
}

std::vector<std::pair<std::string, std::map<std::string, TagSet>>> fixed_methods() {
  return {{"router", {{"a", {"low_carb", "low_sugar"}}, {"b", {"high_sodium", "low_fat"}}, {"c", {"low_sodium"}}}},
          {"majority vote", {{"a", {"low_carb"}}, {"b", {}}, {"c", {"low_fat", "low_sodium", "low_sugar"}}}}};
}

}  // namespace

TEST(Metrics, Examples) {
  const auto same = multilabel_metrics({"low_carb", "low_sugar"}, {"low_carb", "low_sugar"});
  EXPECT_EQ(same.accuracy, 100.0);
  EXPECT_EQ(same.precision, 100.0);
  EXPECT_EQ(same.recall, 100.0);
  EXPECT_EQ(same.f1, 100.0);
  const auto half = multilabel_metrics({"low_carb"}, {"low_carb", "low_sugar"});
  EXPECT_EQ(half.precision, 100.0);
  EXPECT_EQ(half.recall, 50.0);
  EXPECT_NEAR(half.f1, 200.0 / 3.0, 1e-12);
  EXPECT_EQ(half.accuracy, 0.0);
  const auto none = multilabel_metrics({}, {"high_sodium"});
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.recall, 0.0);
  EXPECT_EQ(none.f1, 0.0);
  EXPECT_EQ(none.accuracy, 0.0);
  EXPECT_THROW(multilabel_metrics({"a"}, {}), ContractError);
  EXPECT_EQ(f1_score({"a"}, {}), 0.0);
  EXPECT_NEAR(f1_score({"a"}, {"a", "b"}), 2.0 / 3.0, 1e-15);
}

TEST(Metrics, Properties) {
  Rng rng(21);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto pred = random_tags(rng, 0.5);
    auto gold = random_tags(rng, 0.5);
    if (gold.empty()) continue;
    const auto m = multilabel_metrics(pred, gold);
    for (double v : {m.accuracy, m.precision, m.recall, m.f1}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 100.0);
    }
    if (m.precision == 0.0 && m.recall == 0.0) EXPECT_EQ(m.f1, 0.0);
    if (m.accuracy == 100.0) EXPECT_EQ(m.f1, 100.0);
    EXPECT_LE(m.accuracy, m.f1);
    if (!pred.empty()) {
      const auto swapped = multilabel_metrics(gold, pred);
      EXPECT_NEAR(swapped.f1, m.f1, 1e-12);
      EXPECT_NEAR(swapped.precision, m.recall, 1e-12);
    }
  }
}

TEST(Aggregate, SingleQueryEqualsItsMetrics) {
  const GoldSet gold{{"q", {{"low_carb", "low_sugar"}, "sparse"}}};
  const auto run = score_run({{"q", {"low_carb"}}}, gold);
  const auto agg = aggregate({run});
  ASSERT_FALSE(agg.rows.empty());
  for (const auto& r : agg.rows) {
    EXPECT_EQ(r.queries, 1u);
    EXPECT_EQ(r.mean.f1, run.rows[0].metrics.f1);
    EXPECT_EQ(r.mean.precision, run.rows[0].metrics.precision);
    EXPECT_FALSE(r.stddev.has_value());
  }
  EXPECT_EQ(agg.rows.back().group, "all");
}

TEST(Aggregate, IdenticalRunsHaveZeroStd) {
  Rng rng(2);
  const auto gold = random_gold(rng, 30);
  const auto run = score_run(random_predictions(rng, gold), gold);
  const auto agg = aggregate({run, run, run});
  for (const auto& r : agg.rows) {
    ASSERT_TRUE(r.stddev.has_value());
    EXPECT_EQ(r.runs, 3u);
    EXPECT_EQ(r.stddev->f1, 0.0);
    EXPECT_EQ(r.stddev->accuracy, 0.0);
  }
}

TEST(Aggregate, SampleStdAcrossRuns) {
  const GoldSet gold{{"q", {{"a", "b"}, "sparse"}}};
  const auto r1 = score_run({{"q", {"a", "b"}}}, gold);
  const auto r2 = score_run({{"q", {}}}, gold);
  const auto agg = aggregate({r1, r2});
  const auto& all = agg.rows.back();
  EXPECT_EQ(all.mean.f1, 50.0);
  EXPECT_NEAR(all.stddev->f1, std::sqrt(2.0) * 50.0, 1e-12);
}

TEST(Aggregate, PermutationInvariant) {
  Rng rng(8);
  const auto gold = random_gold(rng, 40);
  std::vector<ScoredRun> runs;
  for (int i = 0; i < 3; ++i) runs.push_back(score_run(random_predictions(rng, gold), gold));
  const auto base = aggregate(runs);
  for (int trial = 0; trial < 10; ++trial) {
    auto shuffled = runs;
    rng.shuffle(shuffled);
    for (auto& r : shuffled) rng.shuffle(r.rows);
    const auto agg = aggregate(shuffled);
    ASSERT_EQ(agg.rows.size(), base.rows.size());
    for (std::size_t i = 0; i < agg.rows.size(); ++i) {
      EXPECT_EQ(agg.rows[i].group, base.rows[i].group);
      EXPECT_NEAR(agg.rows[i].mean.f1, base.rows[i].mean.f1, 1e-9);
      EXPECT_NEAR(agg.rows[i].stddev->f1, base.rows[i].stddev->f1, 1e-9);
    }
  }
}

TEST(Aggregate, EmptyGoldIsFlaggedAndExcluded) {
  const GoldSet gold{{"q1", {{"a"}, "sparse"}}, {"q2", {{}, "complex"}}};
  const auto run = score_run({{"q1", {"a"}}, {"q2", {"a"}}}, gold);
  EXPECT_EQ(run.empty_gold, std::vector<std::string>{"q2"});
  const auto agg = aggregate({run});
  for (const auto& r : agg.rows) EXPECT_NE(r.group, "complex");
  EXPECT_FALSE(agg.notes.empty());
  EXPECT_EQ(agg.rows.back().queries, 1u);
}

TEST(Aggregate, RecordsRoundTripTableAtTwoDecimals) {
  Rng rng(4);
  const auto gold = random_gold(rng, 17);
  const auto agg = aggregate({score_run(random_predictions(rng, gold), gold)});
  const auto records = metrics_records(agg.rows);
  const auto table = format_metrics_table(agg.rows, "run");
  for (const auto& r : records) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << r["mean"]["f1"].get<double>();
    EXPECT_NE(table.find(os.str()), std::string::npos) << os.str();
  }
}

TEST(Compare, GoldMethodScoresHundredAndDuplicatesMatch) {
  Rng rng(12);
  const auto gold = random_gold(rng, 25);
  std::map<std::string, TagSet> perfect;
  for (const auto& [id, e] : gold) perfect[id] = e.gold;
  const auto noisy = random_predictions(rng, gold);
  const auto rows = compare_methods({{"gold", perfect}, {"noisy", noisy}, {"noisy again", noisy}}, gold);
  EXPECT_EQ(rows[0].metrics.mean.f1, 100.0);
  EXPECT_EQ(rows[0].metrics.mean.accuracy, 100.0);
  EXPECT_TRUE(rows[0].best.count("f1"));
  EXPECT_EQ(rows[1].metrics.mean.f1, rows[2].metrics.mean.f1);
  EXPECT_EQ(rows[1].metrics.mean.accuracy, rows[2].metrics.mean.accuracy);
}

TEST(Compare, QuerySetMismatchIsAnError) {
  const GoldSet gold{{"q1", {{"a"}, "s"}}, {"q2", {{"b"}, "s"}}};
  EXPECT_THROW(compare_methods({{"m", {{"q1", {"a"}}}}}, gold), ValidationError);
  EXPECT_THROW(compare_methods({{"m", {{"q1", {"a"}}, {"q2", {}}, {"q3", {}}}}}, gold), ValidationError);
  EXPECT_THROW(score_run({{"q1", {"a"}}}, gold), ValidationError);
}

TEST(Golden, ComparisonTable) {
  expect_golden("comparison_table.txt", format_comparison_table(compare_methods(fixed_methods(), fixed_gold())));
}

TEST(Golden, MetricsTable) {
  const auto methods = fixed_methods();
  const auto gold = fixed_gold();
  const auto agg = aggregate({score_run(methods[0].second, gold), score_run(methods[1].second, gold)});
  expect_golden("metrics_table.txt", format_metrics_table(agg.rows, "two runs"));
}
