#include "kgroute/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <nlohmann/json.hpp>

#include "kgroute/error.hpp"
#include "kgroute/random.hpp"

namespace kgroute {

using nlohmann::json;
using ad::Tensor;

namespace {

constexpr int kStateVersion = 1;

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Non-finite inputs or parameters make the forward pass fail its contracts;
// that is reported as divergence on the offending query.
ForwardResult checked_forward(const Example& ex, const ParamStore& params) {
  try {
    return forward(ex.plan, ex.embeddings, params);
  } catch (const ContractError&) {
    bool finite = ex.embeddings.allFinite();
    for (const auto& [name, t] : params.arrays()) finite = finite && t.allFinite();
    if (!finite) throw DivergenceError(ex.query_id);
    throw;
  }
}

Tensor row_of(const std::vector<double>& v) {
  Tensor t(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) t(0, static_cast<Eigen::Index>(i)) = v[i];
  return t;
}

json metrics_state(const EpochMetrics& m) {
  return {{"epoch", m.epoch},         {"train_kl", m.train_kl}, {"val_kl", m.val_kl},
          {"train_top1", m.train_top1}, {"val_top1", m.val_top1}};
}

EpochMetrics metrics_from_state(const json& j) {
  EpochMetrics m;
  m.epoch = j.at("epoch").get<int>();
  m.train_kl = j.at("train_kl").get<double>();
  m.val_kl = j.at("val_kl").get<double>();
  m.train_top1 = j.at("train_top1").get<double>();
  m.val_top1 = j.at("val_top1").get<double>();
  return m;
}

}  // namespace

std::vector<double> target_distribution(const std::vector<double>& f1, double temperature) {
  if (f1.empty()) throw ContractError("target_distribution needs at least one agent");
  if (!(temperature > 0.0)) throw ContractError("temperature must be positive");
  std::vector<double> scaled(f1.size());
  for (std::size_t i = 0; i < f1.size(); ++i) scaled[i] = f1[i] / temperature;
  return route_distribution(scaled);
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("Adam eps must be positive");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (patience < 0) throw ConfigError("patience must be non-negative");
  if (!(clip >= 0.0)) throw ConfigError("clip must be non-negative");
}

json TrainConfig::to_json() const {
  return {{"lr", lr},           {"beta1", beta1},     {"beta2", beta2}, {"eps", eps},
          {"epochs", epochs},   {"temperature", temperature},           {"seed", seed},
          {"patience", patience}, {"clip", clip}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.lr = j.at("lr").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps = j.at("eps").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.temperature = j.at("temperature").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.patience = j.at("patience").get<int>();
  c.clip = j.at("clip").get<double>();
  return c;
}

Example make_example(const RoutedGraph& g, Tensor embeddings, const PerformanceRecord& perf,
                     double temperature) {
  Example ex;
  ex.query_id = g.query_id();
  ex.plan = make_plan(g);
  ex.embeddings = std::move(embeddings);
  ex.agents = g.agent_ids();
  for (const auto& a : ex.agents) ex.f1.push_back(perf.at(ex.query_id, a));
  ex.target = target_distribution(ex.f1, temperature);
  return ex;
}

json EpochMetrics::to_json() const {
  json j = metrics_state(*this);
  j["seconds"] = seconds;
  return j;
}

TrainState initial_state(const ParamStore& params, const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.config = config;
  s.params = params;
  s.best = params;
  for (const auto& [name, t] : params.arrays()) {
    s.adam.m[name] = Tensor::Zero(t.rows(), t.cols());
    s.adam.v[name] = Tensor::Zero(t.rows(), t.cols());
  }
  s.best_val = std::numeric_limits<double>::infinity();
  s.rng = Rng(derive_seed(config.seed, "train-order")).state();
  return s;
}

void save_train_state(const std::string& path, const TrainState& s) {
  json history = json::array();
  for (const auto& m : s.history) history.push_back(metrics_state(m));
  json meta{{"kind", "train-state"},
            {"version", kStateVersion},
            {"params", s.best.manifest()},
            {"config", s.config.to_json()},
            {"epoch", s.epoch},
            {"best_epoch", s.best_epoch},
            {"best_val", std::isfinite(s.best_val) ? json(s.best_val) : json(nullptr)},
            {"bad_epochs", s.bad_epochs},
            {"finished", s.finished},
            {"adam_step", s.adam.step},
            {"rng", s.rng},
            {"history", history}};
  // Best parameters keep their plain names so load_params() reads them.
  std::vector<std::pair<std::string, const Tensor*>> arrays;
  std::vector<std::string> names;
  for (const auto& [name, t] : s.best.arrays()) arrays.emplace_back(name, &t);
  for (const auto& [name, t] : s.params.arrays()) arrays.emplace_back("current/" + name, &t);
  for (const auto& [name, t] : s.adam.m) arrays.emplace_back("adam_m/" + name, &t);
  for (const auto& [name, t] : s.adam.v) arrays.emplace_back("adam_v/" + name, &t);
  write_container(path, meta, arrays);
}

TrainState load_train_state(const std::string& path) {
  auto [meta, arrays] = read_container(path);
  if (meta.value("kind", "") != "train-state") {
    throw UnsupportedSchemaError("'" + path + "' holds parameters only, not a resumable train state");
  }
  if (meta.value("version", 0) != kStateVersion) {
    throw UnsupportedSchemaError("unsupported train-state version in '" + path + "'");
  }
  TrainState s;
  try {
    s.config = TrainConfig::from_json(meta.at("config"));
    s.best = ParamStore::from_manifest(meta.at("params"));
    s.params = s.best;
    s.epoch = meta.at("epoch").get<int>();
    s.best_epoch = meta.at("best_epoch").get<int>();
    s.best_val = meta.at("best_val").is_null() ? std::numeric_limits<double>::infinity()
                                                : meta.at("best_val").get<double>();
    s.bad_epochs = meta.at("bad_epochs").get<int>();
    s.finished = meta.at("finished").get<bool>();
    s.adam.step = meta.at("adam_step").get<std::int64_t>();
    s.rng = meta.at("rng").get<std::string>();
    for (const auto& h : meta.at("history")) s.history.push_back(metrics_from_state(h));
  } catch (const json::exception& e) {
    throw ValidationError("malformed train-state manifest: " + std::string(e.what()));
  }
  auto take = [&](const std::string& name, const Tensor& like) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw ValidationError("train state lacks array '" + name + "'");
    if (it->second.rows() != like.rows() || it->second.cols() != like.cols()) {
      throw ValidationError("train-state array '" + name + "' has the wrong shape");
    }
    return std::move(it->second);
  };
  for (auto& [name, t] : s.best.arrays()) {
    t = take(name, t);
    s.params.at(name) = take("current/" + name, t);
    s.adam.m[name] = take("adam_m/" + name, t);
    s.adam.v[name] = take("adam_v/" + name, t);
  }
  return s;
}

double train_step(TrainState& s, const Example& ex) {
  auto fr = checked_forward(ex, s.params);
  const auto loss = ad::kl_div(fr.tape, row_of(ex.target), fr.probs);
  const double value = fr.tape.value(loss)(0, 0);
  if (!std::isfinite(value)) throw DivergenceError(ex.query_id);
  fr.tape.backward(loss);

  std::map<std::string, const Tensor*> grads;
  double sq = 0.0;
  for (const auto& [name, var] : fr.params) {
    const Tensor& g = fr.tape.grad(var);
    grads[name] = &g;
    sq += g.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw DivergenceError(ex.query_id);
  const double factor = s.config.clip > 0.0 && norm > s.config.clip ? s.config.clip / norm : 1.0;

  const auto& c = s.config;
  ++s.adam.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.adam.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.adam.step));
  for (auto& [name, p] : s.params.arrays()) {
    auto m = s.adam.m.at(name).array();
    auto v = s.adam.v.at(name).array();
    auto it = grads.find(name);
    if (it == grads.end()) {
      m *= c.beta1;
      v *= c.beta2;
    } else {
      const auto g = it->second->array() * factor;
      m = c.beta1 * m + (1.0 - c.beta1) * g;
      v = c.beta2 * v + (1.0 - c.beta2) * g.square();
    }
    p.array() -= c.lr * (m / bc1) / ((v / bc2).sqrt() + c.eps);
  }
  return value;
}

RouterEval evaluate_router(const ParamStore& params, const std::vector<Example>& examples) {
  RouterEval out;
  if (examples.empty()) return out;
  for (const auto& ex : examples) {
    const auto fr = checked_forward(ex, params);
    const auto p = fr.distribution();
    out.mean_kl += ad::kl_divergence(row_of(ex.target), row_of(p));
    out.top1 += argmax(p) == argmax(ex.target) ? 1.0 : 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) out.expected_f1 += p[i] * ex.f1[i];
  }
  const double n = static_cast<double>(examples.size());
  out.mean_kl /= n;
  out.top1 /= n;
  out.expected_f1 /= n;
  return out;
}

void train(TrainState& s, const std::vector<Example>& train_set, const std::vector<Example>& val_set,
           const TrainHooks& hooks) {
  s.config.validate();
  if (train_set.empty()) throw ContractError("training needs at least one example");
  Rng rng;
  rng.set_state(s.rng);
  std::vector<std::size_t> order(train_set.size());

  while (!s.finished && s.epoch < s.config.epochs) {
    if (hooks.stop_after && s.epoch >= *hooks.stop_after) return;
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t i : order) train_step(s, train_set[i]);

    EpochMetrics m;
    m.epoch = ++s.epoch;
    const auto tr = evaluate_router(s.params, train_set);
    m.train_kl = tr.mean_kl;
    m.train_top1 = tr.top1;
    if (!val_set.empty()) {
      const auto va = evaluate_router(s.params, val_set);
      m.val_kl = va.mean_kl;
      m.val_top1 = va.top1;
    } else {
      m.val_kl = tr.mean_kl;
      m.val_top1 = tr.top1;
    }
    if (!std::isfinite(m.train_kl) || !std::isfinite(m.val_kl)) throw DivergenceError(train_set[order.back()].query_id);

    if (m.val_kl < s.best_val) {
      s.best_val = m.val_kl;
      s.best_epoch = m.epoch;
      s.best = s.params;
      s.bad_epochs = 0;
    } else {
      ++s.bad_epochs;
    }
    if ((s.config.patience > 0 && s.bad_epochs >= s.config.patience) || s.epoch >= s.config.epochs) {
      s.finished = true;
    }
    s.rng = rng.state();
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    s.history.push_back(m);
    if (!hooks.checkpoint_path.empty()) save_train_state(hooks.checkpoint_path, s);
    if (hooks.on_epoch) hooks.on_epoch(m);
  }
}

}  // namespace kgroute
