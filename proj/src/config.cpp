#include "kgroute/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kgroute/embed.hpp"
#include "kgroute/error.hpp"
#include "kgroute/random.hpp"

namespace kgroute {

using nlohmann::json;

namespace {

// Reads one JSON object section, remembering which keys were consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config section '" + where() + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + where(key) + "' has the wrong type");
    }
  }

  template <class T>
  void get_opt(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }

  void get_ms(const char* key, std::chrono::milliseconds& out) {
    long long v = out.count();
    get(key, v);
    out = std::chrono::milliseconds(v);
  }

  std::optional<Section> sub(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Section(j_.at(key), where(key));
  }

  std::string string_or(const char* key, const std::string& fallback) {
    std::string v = fallback;
    get(key, v);
    return v;
  }

  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + where(k) + "'");
    }
  }

 private:
  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string mode_name(SalienceModeSetting m) {
  switch (m) {
    case SalienceModeSetting::kOracle:
      return "oracle";
    case SalienceModeSetting::kSelf:
      return "self";
    default:
      return "auto";
  }
}

SalienceModeSetting parse_mode_setting(const std::string& s) {
  if (s == "auto") return SalienceModeSetting::kAuto;
  if (s == "oracle") return SalienceModeSetting::kOracle;
  if (s == "self") return SalienceModeSetting::kSelf;
  throw ConfigError("retrieval.mode must be auto, oracle or self");
}

}  // namespace

RunConfig::RunConfig() {
  model.hidden = 128;
  train.lr = 1e-4;
  embedder.dimension = 64;
  apply_seed(*this, seed);
}

void apply_seed(RunConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.scenario.seed = seed;
  c.model.seed = derive_seed(seed, "model");
  c.train.seed = derive_seed(seed, "train");
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  std::uint64_t seed = c.seed;
  root.get("seed", seed);
  root.get("jobs", c.jobs);

  if (auto s = root.sub("paths")) {
    s->get("run_root", c.paths.run_root);
    s->get("run_dir", c.paths.run_dir);
    s->get("corpus", c.paths.corpus);
    s->get("pool", c.paths.pool);
    s->get("answers", c.paths.answers);
    s->get("lexicon", c.paths.lexicon);
    s->get("cache", c.paths.cache);
    s->finish();
  }
  if (auto s = root.sub("scenario")) {
    auto& sc = c.scenario;
    s->get("families", sc.families);
    s->get("train_per_family", sc.train_per_family);
    s->get("test_per_family", sc.test_per_family);
    s->get("val_fraction", sc.val_fraction);
    s->get("noise_min", sc.noise_min);
    s->get("noise_max", sc.noise_max);
    s->get("backbones", sc.backbones);
    s->get("expert_hit", sc.expert_hit);
    s->get("base_hit", sc.base_hit);
    s->get("flip", sc.flip);
    s->get("noisy_agents", sc.noisy_agents);
    s->get("noisy_flip", sc.noisy_flip);
    s->get("noise_sensitive", sc.noise_sensitive);
    s->get("sensitivity", sc.sensitivity);
    s->get("budget", sc.budget);
    s->get("attend_signal", sc.attend_signal);
    s->get("attend_noise", sc.attend_noise);
    s->finish();
  }
  if (auto s = root.sub("model")) {
    s->get("layers", c.model.layers);
    s->get("hidden", c.model.hidden);
    s->finish();
  }
  if (auto s = root.sub("train")) {
    auto& t = c.train;
    s->get("lr", t.lr);
    s->get("beta1", t.beta1);
    s->get("beta2", t.beta2);
    s->get("eps", t.eps);
    s->get("epochs", t.epochs);
    s->get("temperature", t.temperature);
    s->get("patience", t.patience);
    s->get("clip", t.clip);
    s->finish();
  }
  if (auto s = root.sub("retrieval")) {
    auto& r = c.retrieval;
    s->get("tau", r.retrieval.tau);
    s->get("keep_mentions", r.retrieval.keep_mentions);
    r.mode = parse_mode_setting(s->string_or("mode", mode_name(r.mode)));
    r.site = parse_state_site(s->string_or("site", to_string(r.site)));
    s->finish();
  }
  if (auto s = root.sub("vote")) {
    s->get_opt("k", c.vote.k);
    s->get("theta", c.vote.theta);
    s->get("missing_as_empty", c.vote.missing_as_empty);
    s->finish();
  }
  if (auto s = root.sub("embedder")) {
    auto& e = c.embedder;
    const std::string mode = s->string_or("mode", e.mode == EmbedderConfig::Mode::kHash ? "hash" : "external");
    if (mode == "hash") {
      e.mode = EmbedderConfig::Mode::kHash;
    } else if (mode == "external") {
      e.mode = EmbedderConfig::Mode::kExternal;
    } else {
      throw ConfigError("embedder.mode must be hash or external");
    }
    s->get("dimension", e.dimension);
    s->get("seed", e.seed);
    s->get("endpoint", e.endpoint);
    s->get("model", e.model);
    s->get("api_key_env", e.api_key_env);
    s->get("max_batch", e.max_batch);
    s->get("max_in_flight", e.max_in_flight);
    s->get("max_attempts", e.max_attempts);
    s->get_ms("timeout_ms", e.timeout);
    s->finish();
  }
  if (auto s = root.sub("agents")) {
    const std::string src = s->string_or("source", "synthetic");
    if (src == "synthetic") {
      c.agents.source = AgentSource::kSynthetic;
    } else if (src == "llm") {
      c.agents.source = AgentSource::kLlm;
    } else {
      throw ConfigError("agents.source must be synthetic or llm");
    }
    if (auto l = s->sub("llm")) {
      auto& m = c.agents.llm;
      l->get("endpoint", m.endpoint);
      l->get("api_key_env", m.api_key_env);
      l->get("temperature", m.temperature);
      l->get("max_attempts", m.max_attempts);
      l->get("concurrency", m.concurrency);
      l->get_ms("timeout_ms", m.timeout);
      l->get_ms("min_interval_ms", m.min_interval);
      l->finish();
    }
    s->finish();
  }
  if (auto s = root.sub("eval")) {
    s->get("split", c.eval.split);
    s->finish();
  }
  if (auto s = root.sub("sweep")) {
    s->get("k", c.sweep.k);
    s->get("layers", c.sweep.layers);
    s->get("hidden", c.sweep.hidden);
    s->finish();
  }
  root.finish();
  apply_seed(c, seed);
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j = json::parse(in, nullptr, false, true);
  if (j.is_discarded()) throw ConfigError("config file '" + path + "' is not valid JSON");
  return from_json(j);
}

json RunConfig::resolved() const {
  json j;
  j["seed"] = seed;
  j["jobs"] = jobs;
  j["paths"] = {{"run_root", paths.run_root}, {"run_dir", paths.run_dir}, {"corpus", paths.corpus},
                {"pool", paths.pool},         {"answers", paths.answers}, {"lexicon", paths.lexicon},
                {"cache", paths.cache}};
  const auto& sc = scenario;
  j["scenario"] = {{"families", sc.families},
                   {"train_per_family", sc.train_per_family},
                   {"test_per_family", sc.test_per_family},
                   {"val_fraction", sc.val_fraction},
                   {"noise_min", sc.noise_min},
                   {"noise_max", sc.noise_max},
                   {"backbones", sc.backbones},
                   {"expert_hit", sc.expert_hit},
                   {"base_hit", sc.base_hit},
                   {"flip", sc.flip},
                   {"noisy_agents", sc.noisy_agents},
                   {"noisy_flip", sc.noisy_flip},
                   {"noise_sensitive", sc.noise_sensitive},
                   {"sensitivity", sc.sensitivity},
                   {"budget", sc.budget},
                   {"attend_signal", sc.attend_signal},
                   {"attend_noise", sc.attend_noise}};
  j["model"] = {{"layers", model.layers}, {"hidden", model.hidden}};
  json t = train.to_json();
  t.erase("seed");
  j["train"] = t;
  j["retrieval"] = {{"tau", retrieval.retrieval.tau},
                    {"keep_mentions", retrieval.retrieval.keep_mentions},
                    {"mode", mode_name(retrieval.mode)},
                    {"site", to_string(retrieval.site)}};
  j["vote"] = {{"k", vote.k ? json(*vote.k) : json(nullptr)},
               {"theta", vote.theta},
               {"missing_as_empty", vote.missing_as_empty}};
  const auto& e = embedder;
  j["embedder"] = {{"mode", e.mode == EmbedderConfig::Mode::kHash ? "hash" : "external"},
                   {"dimension", e.dimension},
                   {"seed", e.seed},
                   {"endpoint", e.endpoint},
                   {"model", e.model},
                   {"api_key_env", e.api_key_env},
                   {"max_batch", e.max_batch},
                   {"max_in_flight", e.max_in_flight},
                   {"max_attempts", e.max_attempts},
                   {"timeout_ms", e.timeout.count()}};
  const auto& l = agents.llm;
  j["agents"] = {{"source", agents.source == AgentSource::kSynthetic ? "synthetic" : "llm"},
                 {"llm",
                  {{"endpoint", l.endpoint},
                   {"api_key_env", l.api_key_env},
                   {"temperature", l.temperature},
                   {"max_attempts", l.max_attempts},
                   {"concurrency", l.concurrency},
                   {"timeout_ms", l.timeout.count()},
                   {"min_interval_ms", l.min_interval.count()}}}};
  j["eval"] = {{"split", eval.split}};
  j["sweep"] = {{"k", sweep.k}, {"layers", sweep.layers}, {"hidden", sweep.hidden}};
  return j;
}

std::string RunConfig::hash() const {
  json j = resolved();
  // Where the run lives and how many workers it uses do not change its outputs.
  j["paths"].erase("run_dir");
  j["paths"].erase("run_root");
  j.erase("jobs");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(stable_hash(j.dump(), 0)));
  return buf;
}

std::string RunConfig::run_directory() const {
  if (!paths.run_dir.empty()) return paths.run_dir;
  return (std::filesystem::path(paths.run_root) / hash()).string();
}

void RunConfig::validate() const {
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  scenario.validate();
  model.validate();
  train.validate();
  retrieval.retrieval.validate();
  if (!(retrieval.retrieval.tau > 0.0)) throw ConfigError("retrieval.tau must lie in (0, 1)");
  vote.validate();
  embedder.validate();
  if (agents.source == AgentSource::kLlm) agents.llm.validate();
  if (eval.split != "" && eval.split != "train" && eval.split != "val" && eval.split != "test") {
    throw ConfigError("eval.split must be train, val, test or empty");
  }
  for (auto k : sweep.k) {
    if (k == 0) throw ConfigError("sweep.k entries must be at least 1");
  }
}

}  // namespace kgroute
