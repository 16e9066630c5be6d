#include "kgroute/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include <nlohmann/json.hpp>

#include "kgroute/error.hpp"

namespace kgroute {

using nlohmann::json;
using ad::Tensor;

namespace {

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string to_string(SalienceMode m) { return m == SalienceMode::kOracle ? "oracle" : "self"; }

SalienceMode parse_salience_mode(const std::string& s) {
  if (s == "oracle") return SalienceMode::kOracle;
  if (s == "self") return SalienceMode::kSelf;
  throw ConfigError("unknown salience mode '" + s + "' (expected oracle or self)");
}

std::string to_string(StateSite s) {
  switch (s) {
    case StateSite::kInput:
      return "input";
    case StateSite::kInitial:
      return "initial";
    case StateSite::kFinal:
      return "final";
  }
  return "input";
}

StateSite parse_state_site(const std::string& s) {
  if (s == "input") return StateSite::kInput;
  if (s == "initial") return StateSite::kInitial;
  if (s == "final") return StateSite::kFinal;
  throw ConfigError("unknown salience site '" + s + "' (expected input, initial or final)");
}

double SalienceMap::at(const std::string& entity) const {
  for (std::size_t i = 0; i < entities.size(); ++i) {
    if (entities[i] == entity) return alpha[i];
  }
  throw ContractError("no salience entry for entity '" + entity + "'");
}

SalienceMap entity_salience(const RoutedGraph& g, const GraphPlan& plan, const Tensor& embeddings,
                            const ParamStore& params, const SalienceOptions& options,
                            const std::optional<std::vector<double>>& target) {
  ForwardOptions fo;
  fo.input_grad = options.site == StateSite::kInput;
  auto fr = forward(plan, embeddings, params, fo);
  ad::Var loss;
  if (options.mode == SalienceMode::kOracle) {
    if (!target) throw ContractError("oracle salience needs the target distribution");
    if (target->size() != plan.agents.size()) throw ContractError("target length differs from the agent count");
    Tensor t(1, static_cast<Eigen::Index>(target->size()));
    for (std::size_t i = 0; i < target->size(); ++i) t(0, static_cast<Eigen::Index>(i)) = (*target)[i];
    loss = ad::kl_div(fr.tape, t, fr.probs);
  } else {
    const auto p = fr.distribution();
    const auto top = static_cast<ad::Index>(std::max_element(p.begin(), p.end()) - p.begin());
    loss = ad::nll(fr.tape, fr.probs, top);
  }
  if (options.loss_scale != 1.0) loss = ad::scale(fr.tape, loss, options.loss_scale);
  fr.tape.backward(loss);
  const Tensor& grad = fr.tape.grad_at(fr.site(options.site));

  SalienceMap s;
  s.mode = options.mode;
  const auto& nodes = g.nodes();
  double total = 0.0;
  for (std::size_t i = 0; i < g.entity_count(); ++i) {
    s.entities.push_back(nodes[i].id);
    const double n = grad.row(static_cast<Eigen::Index>(i)).norm();
    s.raw.push_back(n);
    total += n;
  }
  s.alpha.resize(s.raw.size());
  if (!(total > 0.0)) {
    if (!s.raw.empty()) {
      s.warnings.push_back("all entity gradients are zero; salience set to uniform");
      std::fill(s.alpha.begin(), s.alpha.end(), 1.0 / static_cast<double>(s.raw.size()));
    }
  } else {
    for (std::size_t i = 0; i < s.raw.size(); ++i) s.alpha[i] = s.raw[i] / total;
  }
  return s;
}

SalienceMap salience_from_scores(const RoutedGraph& g, const std::vector<std::pair<std::string, double>>& scores) {
  SalienceMap s;
  for (std::size_t i = 0; i < g.entity_count(); ++i) {
    const auto& id = g.nodes()[i].id;
    double v = 0.0;
    for (const auto& [e, a] : scores) {
      if (e == id) v = a;
    }
    s.entities.push_back(id);
    s.raw.push_back(v);
    s.alpha.push_back(v);
  }
  return s;
}

void RetrievalConfig::validate() const {
  if (!(tau >= 0.0 && tau < 1.0)) throw ConfigError("retrieval tau must lie in [0, 1)");
}

RetrievalResult retrieve_subgraph(const RoutedGraph& g, const SalienceMap& salience, const RetrievalConfig& config,
                                  const std::optional<std::vector<std::string>>& signal) {
  config.validate();
  if (salience.entities.size() != g.entity_count()) {
    throw ContractError("salience map does not cover every entity of the graph");
  }
  std::set<std::string> keep;
  for (std::size_t i = 0; i < salience.entities.size(); ++i) {
    if (salience.alpha[i] > config.tau) keep.insert(salience.entities[i]);
  }
  if (config.keep_mentions) {
    for (const auto& m : g.mentions()) {
      if (g.base().contains(m)) keep.insert(m);
    }
  }
  RetrievalResult r;
  if (keep.empty() && !salience.entities.empty()) {
    const auto top = std::max_element(salience.alpha.begin(), salience.alpha.end()) - salience.alpha.begin();
    keep.insert(salience.entities[static_cast<std::size_t>(top)]);
    r.warnings.push_back("no entity above tau; kept the top entity '" + *keep.begin() + "'");
  }
  r.graph = induced_subgraph(g, keep);
  for (const auto& n : r.graph.base().nodes) r.kept.push_back(n.id);
  r.before = graph_stats(g, signal);
  r.after = graph_stats(r.graph, signal);
  return r;
}

double drop_pct(double before, double after) { return before > 0.0 ? 100.0 * (before - after) / before : 0.0; }
double raise_pct(double before, double after) { return before > 0.0 ? 100.0 * (after - before) / before : 0.0; }

RetrievalReport retrieval_report(const std::vector<std::pair<GraphStats, GraphStats>>& rows) {
  RetrievalReport r;
  r.queries = rows.size();
  if (rows.empty()) return r;
  bool snr = true;
  double sb = 0.0, sa = 0.0;
  for (const auto& [b, a] : rows) {
    r.nodes_before += static_cast<double>(b.entity_nodes);
    r.nodes_after += static_cast<double>(a.entity_nodes);
    r.edges_before += static_cast<double>(b.entity_edges);
    r.edges_after += static_cast<double>(a.entity_edges);
    if (b.node_snr && a.node_snr) {
      sb += *b.node_snr;
      sa += *a.node_snr;
    } else {
      snr = false;
    }
  }
  const double n = static_cast<double>(rows.size());
  r.nodes_before /= n;
  r.nodes_after /= n;
  r.edges_before /= n;
  r.edges_after /= n;
  r.node_drop_pct = drop_pct(r.nodes_before, r.nodes_after);
  r.edge_drop_pct = drop_pct(r.edges_before, r.edges_after);
  if (snr) {
    r.snr_before = sb / n;
    r.snr_after = sa / n;
    r.snr_raise_pct = raise_pct(*r.snr_before, *r.snr_after);
  }
  return r;
}

std::string format_retrieval_table(const std::vector<std::pair<std::string, RetrievalReport>>& rows) {
  std::vector<std::vector<std::string>> cells{
      {"setting", "n", "nodes", "nodes*", "drop%", "edges", "edges*", "drop%", "snr", "snr*", "raise%"}};
  for (const auto& [label, r] : rows) {
    auto opt = [](const std::optional<double>& v) { return v ? fixed2(*v) : std::string("-"); };
    cells.push_back({label, std::to_string(r.queries), fixed2(r.nodes_before), fixed2(r.nodes_after),
                     fixed2(r.node_drop_pct), fixed2(r.edges_before), fixed2(r.edges_after), fixed2(r.edge_drop_pct),
                     opt(r.snr_before), opt(r.snr_after), opt(r.snr_raise_pct)});
  }
  std::vector<std::size_t> w(cells.front().size(), 0);
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) w[i] = std::max(w[i], row[i].size());
  }
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    std::string line;
    for (std::size_t i = 0; i < cells[r].size(); ++i) {
      const auto& c = cells[r][i];
      if (i) line += "  ";
      line += i == 0 ? c + std::string(w[i] - c.size(), ' ') : std::string(w[i] - c.size(), ' ') + c;
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t i = 0; i < w.size(); ++i) total += w[i] + (i ? 2 : 0);
      out += std::string(total, '-') + "\n";
    }
  }
  return out;
}

json retrieval_record(const RetrievalReport& r) {
  json j{{"queries", r.queries},           {"nodes_before", r.nodes_before}, {"nodes_after", r.nodes_after},
         {"node_drop_pct", r.node_drop_pct}, {"edges_before", r.edges_before}, {"edges_after", r.edges_after},
         {"edge_drop_pct", r.edge_drop_pct}};
  if (r.snr_before) {
    j["snr_before"] = *r.snr_before;
    j["snr_after"] = *r.snr_after;
    j["snr_raise_pct"] = *r.snr_raise_pct;
  }
  return j;
}

std::string salience_dump(const std::string& query_id, const SalienceMap& s) {
  std::string out;
  for (std::size_t i = 0; i < s.entities.size(); ++i) {
    out += json{{"query", query_id}, {"entity", s.entities[i]}, {"raw", s.raw[i]}, {"alpha", s.alpha[i]}}.dump() +
           "\n";
  }
  return out;
}

}  // namespace kgroute
