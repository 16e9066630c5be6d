#include "kgroute/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kgroute/agents.hpp"
#include "kgroute/error.hpp"
#include "kgroute/http.hpp"
#include "kgroute/labels.hpp"
#include "kgroute/llm.hpp"

namespace kgroute {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::vector<QueryInstance> load_corpus(const Run& run) {
  return read_corpus(run.require("corpus.jsonl", "ingest|simulate"));
}

std::vector<AgentSpec> load_pool(const Run& run) {
  return read_pool_json(read_file(run.require("pool.json", "ingest|simulate")));
}

std::vector<std::string> load_vocabulary(const Run& run) {
  return json::parse(read_file(run.require("vocabulary.json", "ingest|simulate"))).get<std::vector<std::string>>();
}

PerformanceRecord load_labels(const Run& run) { return read_performance(run.require("labels.jsonl", "label")); }

bool any_split(const std::vector<QueryInstance>& qs) {
  return std::any_of(qs.begin(), qs.end(), [](const QueryInstance& q) { return !q.split.empty(); });
}

// The evaluation split, or everything when the corpus carries no splits.
std::vector<QueryInstance> eval_queries(const Run& run, const std::vector<QueryInstance>& qs) {
  const auto& split = run.config().eval.split;
  if (split.empty() || !any_split(qs)) return qs;
  std::vector<QueryInstance> out;
  for (const auto& q : qs) {
    if (q.split == split) out.push_back(q);
  }
  if (out.empty()) throw ValidationError("no queries in split '" + split + "'");
  return out;
}

std::map<std::string, TagSet> gold_map(const std::vector<QueryInstance>& qs) {
  std::map<std::string, TagSet> gold;
  for (const auto& q : qs) {
    if (!q.gold.empty()) gold[q.id] = TagSet(q.gold.begin(), q.gold.end());
  }
  return gold;
}

std::vector<std::string> agent_ids(const std::vector<AgentSpec>& pool) {
  std::vector<std::string> ids;
  for (const auto& a : pool) ids.push_back(a.id);
  return ids;
}

std::vector<std::string> vocabulary_of(const std::vector<QueryInstance>& qs) {
  std::set<std::string> v;
  for (const auto& q : qs) {
    v.insert(q.gold.begin(), q.gold.end());
    for (const auto& n : q.context.nodes) {
      if (n.subkind == "nutrition_tag") v.insert(n.id);
    }
  }
  return {v.begin(), v.end()};
}

class Embedding {
 public:
  explicit Embedding(const Run& run) {
    EmbedderConfig c = run.config().embedder;
    if (c.mode == EmbedderConfig::Mode::kExternal && c.cache_dir.empty()) {
      c.cache_dir = run.config().paths.cache.empty() ? run.path("cache/embeddings") : run.config().paths.cache;
    }
    inner_ = make_embedder(c);
    cached_ = std::make_unique<CachedEmbedder>(*inner_);
  }
  ad::Tensor graph(const RoutedGraph& g, const std::map<std::string, AgentSpec>& pool) {
    return embed_graph(g, pool, *cached_);
  }
  std::size_t dimension() const { return inner_->dimension(); }

 private:
  std::unique_ptr<Embedder> inner_;
  std::unique_ptr<CachedEmbedder> cached_;
};

std::map<std::string, AgentSpec> pool_map(const std::vector<AgentSpec>& pool) {
  std::map<std::string, AgentSpec> m;
  for (const auto& a : pool) m[a.id] = a;
  return m;
}

std::map<std::string, std::vector<AgentAnswer>> by_query(const std::vector<AgentAnswer>& answers) {
  std::map<std::string, std::vector<AgentAnswer>> m;
  for (const auto& a : answers) m[a.query_id].push_back(a);
  return m;
}

json route_record(const RouteDistribution& d) {
  return {{"query", d.query_id}, {"checkpoint", d.checkpoint}, {"agents", d.agents}, {"probs", d.probs}};
}

std::vector<RouteDistribution> read_routes(const std::string& path) {
  std::vector<RouteDistribution> out;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError("route record is not JSON", n, 0);
    RouteDistribution d;
    try {
      d.query_id = j.at("query").get<std::string>();
      d.checkpoint = j.at("checkpoint").get<std::string>();
      d.agents = j.at("agents").get<std::vector<std::string>>();
      d.probs = j.at("probs").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad route record: ") + e.what(), n, 0);
    }
    d.validate();
    out.push_back(std::move(d));
  }
  return out;
}

void write_lines(const std::string& path, const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  http::atomic_write(path, out);
}

std::vector<AgentAnswer> synthetic_answers(const Run& run, const std::vector<QueryInstance>& qs,
                                           const std::vector<const ContextGraph*>& contexts,
                                           const std::vector<std::string>& vocabulary, const std::string& label) {
  const auto profiles = parse_profiles(read_file(run.require("profiles.json", "simulate")));
  std::vector<AgentAnswer> out;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    for (const auto& p : profiles) out.push_back(simulate_answer(p, qs[i], *contexts[i], vocabulary, run.config().seed, label));
  }
  return out;
}

std::vector<AgentAnswer> llm_answers(const Run& run, const std::vector<QueryInstance>& qs,
                                     const std::vector<ContextGraph>& contexts, const std::vector<AgentSpec>& pool,
                                     const std::vector<std::string>& vocabulary, const std::string& label) {
  LlmConfig lc = run.config().agents.llm;
  lc.cache_dir = run.config().paths.cache.empty() ? run.path("cache/llm") : run.config().paths.cache;
  LlmClient client(lc);
  auto out = client.answer_all(pool, qs, contexts, vocabulary, label, run.config().jobs);
  run.log() << "llm requests: " << client.network_calls() << "\n";
  return out;
}

std::vector<AgentAnswer> answer_queries(const Run& run, const std::vector<QueryInstance>& qs,
                                        const std::vector<ContextGraph>& contexts, const std::string& label) {
  const auto vocabulary = load_vocabulary(run);
  if (run.config().agents.source == AgentSource::kLlm) {
    return llm_answers(run, qs, contexts, load_pool(run), vocabulary, label);
  }
  std::vector<const ContextGraph*> ptrs;
  for (const auto& c : contexts) ptrs.push_back(&c);
  return synthetic_answers(run, qs, ptrs, vocabulary, label);
}

struct TrainData {
  std::vector<Example> train;
  std::vector<Example> val;
  std::set<std::string> relations;
  std::set<std::string> types;
  std::size_t dimension = 0;
};

TrainData training_data(const Run& run, const RunConfig& cfg) {
  const auto corpus = load_corpus(run);
  const auto pool = load_pool(run);
  const auto labels = load_labels(run);
  const auto pm = pool_map(pool);
  Embedding emb(run);
  const bool splits = any_split(corpus);
  std::vector<RoutedGraph> graphs;
  std::vector<const QueryInstance*> used;
  for (const auto& q : corpus) {
    if (!labels.f1.count(q.id)) continue;
    if (splits && q.split != "train" && q.split != "val") continue;
    graphs.push_back(extend_graph(q, pool));
    used.push_back(&q);
  }
  if (graphs.empty()) throw ValidationError("no labelled training queries");
  TrainData d;
  d.relations = collect_relations(graphs);
  d.types = collect_types(graphs);
  d.dimension = emb.dimension();
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    auto ex = make_example(graphs[i], emb.graph(graphs[i], pm), labels, cfg.train.temperature);
    (used[i]->split == "val" ? d.val : d.train).push_back(std::move(ex));
  }
  return d;
}

ParamStore load_model(const Run& run) { return load_params(run.require("model/params.bin", "train")); }

double mean_f1(const std::map<std::string, TagSet>& pred, const std::map<std::string, TagSet>& gold) {
  double total = 0.0;
  for (const auto& [q, g] : gold) {
    auto it = pred.find(q);
    total += f1_score(it == pred.end() ? TagSet{} : it->second, g);
  }
  return gold.empty() ? 0.0 : 100.0 * total / static_cast<double>(gold.size());
}

}  // namespace

// ---------------------------------------------------------------------------

Run::Run(RunConfig config, std::ostream& log) : config_(std::move(config)), log_(log) {
  config_.validate();
  dir_ = config_.run_directory();
  fs::create_directories(dir_);
  http::atomic_write(path("config.resolved.json"), config_.resolved().dump(2) + "\n");
}

std::string Run::path(const std::string& rel) const { return (fs::path(dir_) / rel).string(); }

std::string Run::require(const std::string& rel, const std::string& producer) const {
  const std::string p = path(rel);
  if (!fs::exists(p)) {
    std::string how;
    std::size_t start = 0;
    for (std::size_t bar = producer.find('|');; bar = producer.find('|', start)) {
      if (!how.empty()) how += " or ";
      how += "`kgroute " + producer.substr(start, bar - start) + "`";
      if (bar == std::string::npos) break;
      start = bar + 1;
    }
    throw MissingArtifactError("missing " + p + "; run " + how + " with this config first");
  }
  return p;
}

std::string write_pool_json(const std::vector<AgentSpec>& pool) {
  json arr = json::array();
  for (const auto& a : pool) {
    json j{{"id", a.id}, {"backbone", a.backbone}, {"strategy", to_string(a.strategy)}, {"description", a.description}};
    if (!a.attends.empty()) j["attends"] = a.attends;
    arr.push_back(j);
  }
  return arr.dump() + "\n";
}

std::vector<AgentSpec> read_pool_json(const std::string& text) {
  json arr = json::parse(text, nullptr, false);
  if (!arr.is_array()) throw ParseError("agent pool must be a JSON array", 1, 0);
  std::vector<AgentSpec> pool;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& j = arr[i];
    AgentSpec a;
    try {
      a.id = j.at("id").get<std::string>();
      a.backbone = j.at("backbone").get<std::string>();
      a.strategy = parse_strategy(j.at("strategy").get<std::string>());
      a.description = j.value("description", "");
      if (j.contains("attends")) a.attends = j.at("attends").get<std::map<std::string, std::vector<std::string>>>();
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad agent entry: ") + e.what(), 1, i);
    }
    pool.push_back(std::move(a));
  }
  validate_pool(pool);
  return pool;
}

SimulateSummary run_simulate(const Run& run) {
  const auto& cfg = run.config();
  const Scenario s = generate_scenario(cfg.scenario);
  write_corpus(run.path("corpus.jsonl"), s.queries);
  http::atomic_write(run.path("pool.json"), write_pool_json(s.pool));
  http::atomic_write(run.path("profiles.json"), serialize_profiles(s.profiles));
  http::atomic_write(run.path("vocabulary.json"), json(s.vocabulary).dump() + "\n");
  json experts(s.experts);
  http::atomic_write(run.path("experts.json"), experts.dump(2) + "\n");

  std::vector<const ContextGraph*> contexts;
  for (const auto& q : s.queries) contexts.push_back(&q.context);
  const auto answers = synthetic_answers(run, s.queries, contexts, s.vocabulary, "full");
  write_answers(run.path("answers.full.jsonl"), answers);
  write_performance(run.path("labels.jsonl"), score_agent_answers(answers, gold_map(s.queries), agent_ids(s.pool)));
  run.log() << "simulated " << s.queries.size() << " queries, " << s.pool.size() << " agents\n";
  return {s.queries.size(), s.pool.size(), s.experts};
}

std::size_t run_ingest(const Run& run) {
  const auto& paths = run.config().paths;
  if (paths.corpus.empty()) throw ConfigError("paths.corpus is required for ingest");
  if (paths.pool.empty()) throw ConfigError("paths.pool is required for ingest");
  SubkindLexicon lexicon = SubkindLexicon::defaults();
  if (!paths.lexicon.empty()) lexicon = SubkindLexicon::from_json_text(read_file(paths.lexicon));
  const auto corpus = read_corpus(paths.corpus, lexicon);
  const auto pool = read_pool_json(read_file(paths.pool));
  write_corpus(run.path("corpus.jsonl"), corpus);
  http::atomic_write(run.path("pool.json"), write_pool_json(pool));
  http::atomic_write(run.path("vocabulary.json"), json(vocabulary_of(corpus)).dump() + "\n");
  std::size_t degenerate = 0;
  for (const auto& q : corpus) degenerate += q.degenerate;
  run.log() << "ingested " << corpus.size() << " queries (" << degenerate << " without triples), " << pool.size()
            << " agents\n";
  return corpus.size();
}

std::size_t run_label(const Run& run) {
  const auto corpus = load_corpus(run);
  const auto pool = load_pool(run);
  std::vector<AgentAnswer> answers;
  if (!run.config().paths.answers.empty()) {
    answers = read_answers(run.config().paths.answers);
  } else {
    std::vector<ContextGraph> contexts;
    for (const auto& q : corpus) contexts.push_back(q.context);
    answers = answer_queries(run, corpus, contexts, "full");
  }
  write_answers(run.path("answers.full.jsonl"), answers);
  const auto perf = score_agent_answers(answers, gold_map(corpus), agent_ids(pool));
  write_performance(run.path("labels.jsonl"), perf);
  run.log() << "labelled " << perf.f1.size() << " queries, " << perf.flagged.size() << " flagged pairs\n";
  return perf.f1.size();
}

TrainSummary run_train(const Run& run, bool resume, std::optional<int> stop_after) {
  const auto& cfg = run.config();
  TrainData data = training_data(run, cfg);
  fs::create_directories(run.path("model"));
  const std::string state_path = run.path("model/state.bin");
  TrainState st;
  if (resume && fs::exists(state_path)) {
    st = load_train_state(state_path);
    if (st.config.to_json() != cfg.train.to_json()) {
      throw ConfigError("model/state.bin was written with a different train config");
    }
    run.log() << "resuming after epoch " << st.epoch << "\n";
  } else {
    const auto params = init_params(cfg.model, data.dimension, data.relations, data.types, cfg.model.seed);
    st = initial_state(params, cfg.train);
  }
  TrainHooks hooks;
  hooks.checkpoint_path = state_path;
  hooks.stop_after = stop_after;
  hooks.on_epoch = [&](const EpochMetrics& m) {
    run.log() << "epoch " << m.epoch << "  train_kl " << m.train_kl << "  val_kl " << m.val_kl << "  val_top1 "
              << fixed2(100.0 * m.val_top1) << "%  " << fixed2(m.seconds) << "s\n";
  };
  const auto t0 = std::chrono::steady_clock::now();
  train(st, data.train, data.val, hooks);
  TrainSummary s;
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_params(run.path("model/params.bin"), st.best);
  std::vector<json> hist;
  for (const auto& m : st.history) {
    json j = m.to_json();
    j.erase("seconds");
    hist.push_back(j);
  }
  write_lines(run.path("model/history.jsonl"), hist);
  s.epochs = st.epoch;
  s.best_epoch = st.best_epoch;
  s.best_val = st.best_val;
  s.history = st.history;
  run.log() << "trained " << st.epoch << " epochs, best epoch " << st.best_epoch << " (val KL " << st.best_val
            << ")\n";
  return s;
}

std::vector<RouteDistribution> run_route(const Run& run) {
  const auto corpus = load_corpus(run);
  const auto pool = load_pool(run);
  const auto params = load_model(run);
  const auto pm = pool_map(pool);
  Embedding emb(run);
  std::vector<RouteDistribution> out;
  std::vector<json> rows;
  for (const auto& q : eval_queries(run, corpus)) {
    const auto g = extend_graph(q, pool);
    RouteDistribution d;
    d.query_id = q.id;
    d.checkpoint = "model/params.bin";
    d.agents = g.agent_ids();
    d.probs = forward(g, emb.graph(g, pm), params).distribution();
    rows.push_back(route_record(d));
    out.push_back(std::move(d));
  }
  write_lines(run.path("routes.jsonl"), rows);
  run.log() << "routed " << out.size() << " queries\n";
  return out;
}

RetrieveSummary run_retrieve(const Run& run) {
  const auto& cfg = run.config();
  const auto corpus = load_corpus(run);
  const auto pool = load_pool(run);
  const auto params = load_model(run);
  const auto pm = pool_map(pool);
  const auto queries = eval_queries(run, corpus);
  std::optional<PerformanceRecord> labels;
  if (fs::exists(run.path("labels.jsonl"))) labels = load_labels(run);

  SalienceMode mode;
  switch (cfg.retrieval.mode) {
    case SalienceModeSetting::kOracle:
      if (!labels) throw MissingArtifactError("oracle salience needs labels.jsonl; run `kgroute label` first");
      mode = SalienceMode::kOracle;
      break;
    case SalienceModeSetting::kSelf:
      mode = SalienceMode::kSelf;
      break;
    default: {
      bool all = labels.has_value();
      for (const auto& q : queries) all = all && labels->f1.count(q.id);
      mode = all ? SalienceMode::kOracle : SalienceMode::kSelf;
    }
  }

  Embedding emb(run);
  RetrieveSummary s;
  s.mode = mode;
  std::string dump;
  std::vector<QueryInstance> retrieved;
  std::vector<std::pair<GraphStats, GraphStats>> rows;
  bool with_signal = true;
  for (const auto& q : queries) with_signal = with_signal && q.relevant.has_value();
  for (const auto& q : queries) {
    const auto g = extend_graph(q, pool);
    const auto x = emb.graph(g, pm);
    const auto plan = make_plan(g);
    SalienceOptions so;
    so.mode = mode;
    so.site = cfg.retrieval.site;
    std::optional<std::vector<double>> target;
    if (mode == SalienceMode::kOracle) {
      std::vector<double> f1;
      for (const auto& a : g.agent_ids()) f1.push_back(labels->at(q.id, a));
      target = target_distribution(f1, cfg.train.temperature);
    }
    const auto sm = entity_salience(g, plan, x, params, so, target);
    for (const auto& w : sm.warnings) s.warnings.push_back(q.id + ": " + w);
    dump += salience_dump(q.id, sm);
    const auto rr = retrieve_subgraph(g, sm, cfg.retrieval.retrieval, with_signal ? q.relevant : std::nullopt);
    for (const auto& w : rr.warnings) s.warnings.push_back(q.id + ": " + w);
    rows.push_back({rr.before, rr.after});
    QueryInstance r = q;
    r.context = rr.graph.base();
    const std::set<std::string> kept(rr.kept.begin(), rr.kept.end());
    std::erase_if(r.mentions, [&](const std::string& m) { return !kept.count(m); });
    if (r.relevant) std::erase_if(*r.relevant, [&](const std::string& m) { return !kept.count(m); });
    r.degenerate = r.context.triples.empty();
    retrieved.push_back(std::move(r));
  }
  http::atomic_write(run.path("salience.jsonl"), dump);
  write_corpus(run.path("retrieved.jsonl"), retrieved);
  s.report = retrieval_report(rows);
  fs::create_directories(run.path("reports"));
  const std::string label = cfg.eval.split.empty() ? "all" : cfg.eval.split;
  http::atomic_write(run.path("reports/retrieval.txt"), format_retrieval_table({{label, s.report}}));
  json rec = retrieval_record(s.report);
  rec["mode"] = to_string(mode);
  rec["tau"] = cfg.retrieval.retrieval.tau;
  http::atomic_write(run.path("reports/retrieval.json"), rec.dump(2) + "\n");
  for (const auto& w : s.warnings) run.log() << "warning: " << w << "\n";
  run.log() << "retrieved " << queries.size() << " subgraphs (" << to_string(mode) << " salience), nodes "
            << fixed2(s.report.nodes_before) << " -> " << fixed2(s.report.nodes_after) << "\n";
  return s;
}

std::size_t run_answer(const Run& run, const std::string& context) {
  const auto corpus = load_corpus(run);
  std::vector<QueryInstance> qs;
  std::vector<ContextGraph> contexts;
  if (context == "full") {
    qs = corpus;
    for (const auto& q : qs) contexts.push_back(q.context);
  } else if (context == "retrieved") {
    const auto retrieved = read_corpus(run.require("retrieved.jsonl", "retrieve"));
    std::map<std::string, const QueryInstance*> orig;
    for (const auto& q : corpus) orig[q.id] = &q;
    for (const auto& r : retrieved) {
      auto it = orig.find(r.id);
      if (it == orig.end()) throw ValidationError("retrieved query '" + r.id + "' is not in the corpus");
      qs.push_back(*it->second);
      contexts.push_back(r.context);
    }
  } else {
    throw ConfigError("answer context must be full or retrieved");
  }
  const auto answers = answer_queries(run, qs, contexts, context);
  write_answers(run.path("answers." + context + ".jsonl"), answers);
  run.log() << "answered " << qs.size() << " queries on the " << context << " graph\n";
  return answers.size();
}

std::size_t run_vote(const Run& run, const std::string& context) {
  if (context != "full" && context != "retrieved") throw ConfigError("vote context must be full or retrieved");
  const auto routes = read_routes(run.require("routes.jsonl", "route"));
  const auto answers = by_query(read_answers(
      run.require("answers." + context + ".jsonl", context == "full" ? "label" : "answer --context retrieved")));
  std::vector<AgentAnswer> preds;
  std::vector<json> traces;
  for (const auto& d : routes) {
    auto it = answers.find(d.query_id);
    const std::vector<AgentAnswer> none;
    const auto v = weighted_vote(it == answers.end() ? none : it->second, d, run.config().vote);
    AgentAnswer p;
    p.agent_id = "router";
    p.query_id = d.query_id;
    p.tags = v.tags;
    p.context = context;
    preds.push_back(std::move(p));
    traces.push_back(vote_trace_record(d.query_id, v));
  }
  write_answers(run.path("predictions." + context + ".jsonl"), preds);
  write_lines(run.path("traces." + context + ".jsonl"), traces);
  run.log() << "voted on " << preds.size() << " queries (" << context << " graph)\n";
  return preds.size();
}

EvalSummary run_eval(const Run& run) {
  const auto corpus = load_corpus(run);
  const auto pool = load_pool(run);
  const auto queries = eval_queries(run, corpus);
  GoldSet gold;
  std::map<std::string, std::string> setting_of;
  for (const auto& q : queries) {
    gold[q.id] = GoldEntry{TagSet(q.gold.begin(), q.gold.end()), q.setting};
    setting_of[q.id] = q.setting;
  }
  auto predictions_of = [&](const std::vector<AgentAnswer>& answers) {
    std::map<std::string, TagSet> m;
    for (const auto& q : queries) m[q.id];
    for (const auto& a : answers) {
      if (m.count(a.query_id)) m[a.query_id] = a.tags;
    }
    return m;
  };

  std::vector<std::pair<std::string, std::map<std::string, TagSet>>> methods;
  methods.push_back(
      {"router (full graph)", predictions_of(read_answers(run.require("predictions.full.jsonl", "vote")))});
  if (fs::exists(run.path("predictions.retrieved.jsonl"))) {
    methods.push_back({"router (retrieved graph)", predictions_of(read_answers(run.path("predictions.retrieved.jsonl")))});
  }
  const auto full = read_answers(run.require("answers.full.jsonl", "label"));
  const auto grouped = by_query(full);
  std::map<std::string, TagSet> majority;
  for (const auto& q : queries) {
    auto it = grouped.find(q.id);
    majority[q.id] = it == grouped.end() ? TagSet{} : majority_vote(it->second).tags;
  }
  methods.push_back({"majority vote", majority});

  // Oracle selections over the evaluated queries.
  PerformanceRecord perf = score_agent_answers(full, gold_map(queries), agent_ids(pool));
  EvalSummary s;
  std::map<std::pair<std::string, std::string>, TagSet> answer_of;
  for (const auto& a : full) answer_of[{a.query_id, a.agent_id}] = a.tags;
  auto pick = [&](const OracleResult& o, bool per_query) {
    std::map<std::string, TagSet> m;
    for (const auto& q : queries) {
      auto it = o.agent.find(per_query ? q.id : setting_of[q.id]);
      m[q.id] = it == o.agent.end() ? TagSet{} : answer_of[{q.id, it->second}];
    }
    return m;
  };
  if (!perf.f1.empty()) {
    s.per_setting = best_agent_oracle(perf, setting_of, OracleScope::kPerSetting);
    s.per_query = best_agent_oracle(perf, setting_of, OracleScope::kPerQuery);
    methods.push_back({"best agent (per setting)", pick(s.per_setting, false)});
    methods.push_back({"best agent (per query)", pick(s.per_query, true)});
  }
  for (const auto& a : pool) {
    std::map<std::string, TagSet> m;
    for (const auto& q : queries) m[q.id] = answer_of[{q.id, a.id}];
    methods.push_back({a.id, m});
  }
  s.rows = compare_methods(methods, gold);
  s.table = format_comparison_table(s.rows);
  fs::create_directories(run.path("reports"));
  std::string text = s.table;
  if (fs::exists(run.path("reports/retrieval.txt"))) text += "\n" + read_file(run.path("reports/retrieval.txt"));
  http::atomic_write(run.path("reports/eval.txt"), text);
  json rec = json::array();
  for (const auto& r : s.rows) {
    json row = metrics_records({r.metrics}).at(0);
    row["method"] = r.method;
    row["best"] = r.best;
    rec.push_back(row);
  }
  http::atomic_write(run.path("reports/eval.json"), rec.dump(2) + "\n");
  run.log() << s.table;
  return s;
}

std::vector<SweepPoint> run_sweep(const Run& run, const std::string& grid) {
  const auto& cfg = run.config();
  std::vector<SweepPoint> points;
  const auto corpus = load_corpus(run);
  const auto gold = gold_map(eval_queries(run, corpus));
  if (grid == "k") {
    const auto routes = read_routes(run.require("routes.jsonl", "route"));
    const auto answers = by_query(read_answers(run.require("answers.full.jsonl", "label")));
    for (std::size_t k : cfg.sweep.k) {
      std::map<std::string, TagSet> pred;
      bool fits = true;
      for (const auto& d : routes) {
        if (k > d.agents.size()) {
          fits = false;
          break;
        }
        VoteConfig vc = cfg.vote;
        vc.k = k;
        auto it = answers.find(d.query_id);
        pred[d.query_id] = weighted_vote(it == answers.end() ? std::vector<AgentAnswer>{} : it->second, d, vc).tags;
      }
      if (!fits) {
        run.log() << "k=" << k << " exceeds the pool; skipped\n";
        continue;
      }
      points.push_back({"k=" + std::to_string(k), mean_f1(pred, gold)});
    }
  } else if (grid == "layers" || grid == "hidden") {
    const std::vector<int>& values = grid == "layers" ? cfg.sweep.layers : cfg.sweep.hidden;
    for (int v : values) {
      RunConfig sub = cfg;
      (grid == "layers" ? sub.model.layers : sub.model.hidden) = v;
      sub.paths.run_dir = run.path("sweep/" + grid + "-" + std::to_string(v));
      Run r(sub, run.log());
      for (const char* f : {"corpus.jsonl", "pool.json", "vocabulary.json", "labels.jsonl", "answers.full.jsonl"}) {
        fs::copy_file(run.require(f, "simulate|label"), r.path(f), fs::copy_options::overwrite_existing);
      }
      run_train(r);
      run_route(r);
      run_vote(r, "full");
      std::map<std::string, TagSet> pred;
      for (const auto& a : read_answers(r.path("predictions.full.jsonl"))) pred[a.query_id] = a.tags;
      points.push_back({grid + "=" + std::to_string(v), mean_f1(pred, gold)});
    }
  } else {
    throw ConfigError("sweep grid must be k, layers or hidden");
  }
  std::string table = grid + "  F1\n";
  json rec = json::array();
  for (const auto& p : points) {
    table += p.label + "  " + fixed2(p.f1) + "\n";
    rec.push_back({{"point", p.label}, {"f1", p.f1}});
  }
  fs::create_directories(run.path("reports"));
  http::atomic_write(run.path("reports/sweep_" + grid + ".txt"), table);
  http::atomic_write(run.path("reports/sweep_" + grid + ".json"), rec.dump(2) + "\n");
  run.log() << table;
  return points;
}

GradCheckReport run_gradcheck(std::uint64_t seed, std::optional<ad::Op> corrupt) {
  GradCheckCaseSpec spec;
  spec.seed = seed;
  const auto c = make_gradcheck_case(spec);
  GradCheckOptions o;
  o.seed = seed;
  o.corrupt = corrupt;
  return finite_diff_check(make_plan(c.graph), c.embeddings, c.params, c.target, o);
}

}  // namespace kgroute
