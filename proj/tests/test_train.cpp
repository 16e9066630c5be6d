#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "kgroute/embed.hpp"
#include "kgroute/error.hpp"
#include "kgroute/train.hpp"

using namespace kgroute;

namespace {

const std::vector<AgentSpec> kPool{
    AgentSpec{"m::cot", "m", Strategy::kCot, "step by step reasoning", {}},
    AgentSpec{"m::raw", "m", Strategy::kRaw, "direct answer", {}},
    AgentSpec{"m::sc", "m", Strategy::kSc, "self consistency", {}},
};

const char* kKinds[] = {"soup", "salad", "cake"};

// Query i mentions a dish of kind i % 3; the agent with the same index is
// the only one that answers it well.
RoutedGraph toy_graph(int i) {
  const std::string kind = kKinds[i % 3];
  QueryInstance q;
  q.id = "q" + std::to_string(i);
  q.question = "which tags fit this " + kind + " number " + std::to_string(i);
  q.context.record_id = q.id;
  q.context.nodes = {Node{kind, NodeKind::kEntity, "food", kind},
                     Node{"salt", NodeKind::kEntity, "ingredient", "salt"}};
  q.context.triples = {Triple{kind, "contains", "salt"}};
  q.mentions = {kind};
  return extend_graph(q, kPool);
}

struct Toy {
  std::vector<Example> examples;
  ParamStore params;
};

Toy toy_set(int n, double temperature = 0.1) {
  HashEmbedder embedder(16, 3);
  std::map<std::string, AgentSpec> pool;
  for (const auto& a : kPool) pool[a.id] = a;
  PerformanceRecord perf;
  std::vector<RoutedGraph> graphs;
  for (int i = 0; i < n; ++i) {
    graphs.push_back(toy_graph(i));
    for (int a = 0; a < 3; ++a) perf.f1["q" + std::to_string(i)][kPool[a].id] = a == i % 3 ? 1.0 : 0.2;
  }
  Toy t;
  for (const auto& g : graphs) t.examples.push_back(make_example(g, embed_graph(g, pool, embedder), perf, temperature));
  ModelConfig mc;
  mc.hidden = 16;
  mc.strict_grid = false;
  mc.seed = 4;
  t.params = init_params(mc, 16, collect_relations(graphs), collect_types(graphs), mc.seed);
  return t;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("kgroute_train_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(Target, SoftmaxOfScaledF1) {
  const auto t = target_distribution({0.9, 0.5, 0.1}, 0.1);
  const double z = std::exp(9.0) + std::exp(5.0) + std::exp(1.0);
  EXPECT_NEAR(t[0], std::exp(9.0) / z, 1e-15);
  EXPECT_NEAR(t[1], std::exp(5.0) / z, 1e-15);
  EXPECT_NEAR(t[2], std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(t[0], 0.98169, 5e-6);
}

TEST(Target, EqualF1IsUniformAndTemperatureSharpens) {
  for (double f : {0.0, 0.3, 1.0}) {
    for (double p : target_distribution({f, f, f, f}, 0.1)) EXPECT_NEAR(p, 0.25, 1e-15);
  }
  const std::vector<double> f1{0.2, 0.6, 0.4};
  double prev = 0.0;
  for (double temp : {10.0, 1.0, 0.3, 0.1, 0.01}) {
    const auto t = target_distribution(f1, temp);
    EXPECT_NEAR(std::accumulate(t.begin(), t.end(), 0.0), 1.0, 1e-12);
    EXPECT_GT(t[1], prev);
    prev = t[1];
  }
  EXPECT_THROW(target_distribution(f1, 0.0), ContractError);
  EXPECT_THROW(target_distribution({}, 0.1), ContractError);
}

TEST(Target, MakeExampleNeedsEveryLabel) {
  const auto g = toy_graph(0);
  HashEmbedder embedder(16, 3);
  std::map<std::string, AgentSpec> pool;
  for (const auto& a : kPool) pool[a.id] = a;
  PerformanceRecord perf;
  perf.f1["q0"]["m::cot"] = 1.0;
  perf.f1["q0"]["m::raw"] = 0.0;
  EXPECT_THROW(make_example(g, embed_graph(g, pool, embedder), perf, 0.1), ValidationError);
  perf.f1["q0"]["m::sc"] = 0.0;
  const auto ex = make_example(g, embed_graph(g, pool, embedder), perf, 0.1);
  EXPECT_EQ(ex.agents, (std::vector<std::string>{"m::cot", "m::raw", "m::sc"}));
  EXPECT_EQ(ex.target, target_distribution({1.0, 0.0, 0.0}, 0.1));
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c;
  c.lr = 3e-4;
  c.patience = 0;
  EXPECT_EQ(TrainConfig::from_json(c.to_json()), c);
  c.temperature = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lr = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, ZeroLearningRateLeavesParamsAndLossUnchanged) {
  auto toy = toy_set(9);
  TrainConfig c;
  c.lr = 0.0;
  c.epochs = 3;
  c.patience = 0;
  auto state = initial_state(toy.params, c);
  train(state, toy.examples, {});
  EXPECT_TRUE(state.params == toy.params);
  ASSERT_EQ(state.history.size(), 3u);
  EXPECT_EQ(state.history[0].train_kl, state.history[1].train_kl);
  EXPECT_EQ(state.history[1].train_kl, state.history[2].train_kl);
}

TEST(Train, LearnsAToyRoutingTaskWithinFiftyEpochs) {
  auto toy = toy_set(50);
  std::vector<Example> tr(toy.examples.begin(), toy.examples.begin() + 40);
  std::vector<Example> va(toy.examples.begin() + 40, toy.examples.end());
  TrainConfig c;
  c.lr = 1e-3;
  c.epochs = 50;
  c.patience = 0;
  auto state = initial_state(toy.params, c);
  const double before = evaluate_router(state.params, tr).mean_kl;
  train(state, tr, va);
  const auto after = evaluate_router(state.best, toy.examples);
  EXPECT_LT(after.mean_kl, before);
  EXPECT_EQ(after.top1, 1.0);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  auto toy = toy_set(12);
  std::vector<Example> tr(toy.examples.begin(), toy.examples.begin() + 9);
  std::vector<Example> va(toy.examples.begin() + 9, toy.examples.end());
  TrainConfig c;
  c.lr = 5e-3;
  c.epochs = 8;
  c.patience = 0;

  auto full = initial_state(toy.params, c);
  train(full, tr, va);

  const auto dir = temp_dir("resume");
  const std::string ckpt = (dir / "state.bin").string();
  auto first = initial_state(toy.params, c);
  TrainHooks hooks;
  hooks.checkpoint_path = ckpt;
  hooks.stop_after = 3;
  train(first, tr, va, hooks);
  EXPECT_EQ(first.epoch, 3);
  EXPECT_FALSE(first.finished);

  auto resumed = load_train_state(ckpt);
  train(resumed, tr, va);
  ASSERT_EQ(resumed.history.size(), full.history.size());
  for (std::size_t i = 0; i < full.history.size(); ++i) {
    EXPECT_NEAR(resumed.history[i].train_kl, full.history[i].train_kl, 1e-12) << i;
    EXPECT_NEAR(resumed.history[i].val_kl, full.history[i].val_kl, 1e-12) << i;
  }
  EXPECT_TRUE(resumed.params == full.params);
  EXPECT_TRUE(resumed.adam == full.adam);
  std::filesystem::remove_all(dir);
}

TEST(Train, CheckpointRoundTrip) {
  auto toy = toy_set(6);
  TrainConfig c;
  c.epochs = 2;
  auto state = initial_state(toy.params, c);
  train(state, toy.examples, {});
  const auto dir = temp_dir("ckpt");
  const std::string path = (dir / "s.bin").string();
  save_train_state(path, state);
  const auto back = load_train_state(path);
  EXPECT_EQ(back.config, state.config);
  EXPECT_TRUE(back.params == state.params);
  EXPECT_TRUE(back.best == state.best);
  EXPECT_TRUE(back.adam == state.adam);
  EXPECT_EQ(back.epoch, state.epoch);
  EXPECT_EQ(back.rng, state.rng);
  std::filesystem::remove_all(dir);
}

TEST(Train, EarlyStoppingHonoursPatience) {
  auto toy = toy_set(6);
  TrainConfig c;
  c.lr = 0.0;
  c.epochs = 100;
  c.patience = 4;
  auto state = initial_state(toy.params, c);
  train(state, toy.examples, toy.examples);
  EXPECT_TRUE(state.finished);
  EXPECT_EQ(state.best_epoch, 1);
  EXPECT_EQ(state.epoch, 5);
}

TEST(Train, NonFiniteLossNamesTheQuery) {
  auto toy = toy_set(3);
  toy.examples[1].embeddings(0, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig c;
  c.epochs = 1;
  auto state = initial_state(toy.params, c);
  try {
    train(state, toy.examples, {});
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.query_id(), "q1");
  }
}
