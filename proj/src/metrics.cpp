#include "kgroute/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "kgroute/error.hpp"

namespace kgroute {

using nlohmann::json;

namespace {

std::size_t overlap(const TagSet& a, const TagSet& b) {
  std::size_t n = 0;
  for (const auto& t : a) n += b.count(t);
  return n;
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string cell(double mean, const std::optional<double>& sd) {
  return sd ? fixed2(mean) + " ± " + fixed2(*sd) : fixed2(mean);
}

// Display width; "±" is one column but two bytes.
std::size_t width(const std::string& s) {
  std::size_t w = 0;
  for (unsigned char c : s) w += (c & 0xC0) != 0x80;
  return w;
}

std::string pad(const std::string& s, std::size_t w, bool left) {
  const std::size_t n = width(s);
  if (n >= w) return s;
  return left ? s + std::string(w - n, ' ') : std::string(w - n, ' ') + s;
}

std::string render(const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> w(cells.front().size(), 0);
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) w[i] = std::max(w[i], width(row[i]));
  }
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t i = 0; i < cells[r].size(); ++i) {
      if (i) out += "  ";
      out += pad(cells[r][i], w[i], i == 0);
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t i = 0; i < w.size(); ++i) total += w[i] + (i ? 2 : 0);
      out += std::string(total, '-') + '\n';
    }
  }
  return out;
}

constexpr double QueryMetrics::*kFields[] = {&QueryMetrics::accuracy, &QueryMetrics::precision,
                                             &QueryMetrics::recall, &QueryMetrics::f1};

// Equal inputs give that value exactly, so identical runs have zero spread.
QueryMetrics mean_of(const std::vector<QueryMetrics>& v) {
  QueryMetrics m;
  for (auto f : kFields) {
    bool equal = true;
    for (const auto& q : v) {
      m.*f += q.*f;
      equal = equal && q.*f == v.front().*f;
    }
    m.*f = equal ? v.front().*f : m.*f / static_cast<double>(v.size());
  }
  return m;
}

QueryMetrics sample_std(const std::vector<QueryMetrics>& v, const QueryMetrics& mean) {
  QueryMetrics s;
  if (v.size() < 2) return s;
  const double d = static_cast<double>(v.size() - 1);
  for (auto f : kFields) {
    for (const auto& q : v) s.*f += (q.*f - mean.*f) * (q.*f - mean.*f);
    s.*f = std::sqrt(s.*f / d);
  }
  return s;
}

json metrics_json(const QueryMetrics& m) {
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

void require_same_queries(const std::map<std::string, TagSet>& predictions, const GoldSet& gold,
                          const std::string& what) {
  auto p = predictions.begin();
  auto g = gold.begin();
  while (p != predictions.end() || g != gold.end()) {
    if (p == predictions.end() || (g != gold.end() && g->first < p->first)) {
      throw ValidationError(what + " has no prediction for query '" + g->first + "'");
    }
    if (g == gold.end() || p->first < g->first) {
      throw ValidationError(what + " predicts query '" + p->first + "' which has no gold answer");
    }
    ++p;
    ++g;
  }
}

}  // namespace

QueryMetrics multilabel_metrics(const TagSet& pred, const TagSet& gold) {
  if (gold.empty()) throw ContractError("multilabel_metrics needs a non-empty gold set");
  const double hit = static_cast<double>(overlap(pred, gold));
  QueryMetrics m;
  m.precision = pred.empty() ? 0.0 : hit / static_cast<double>(pred.size());
  m.recall = hit / static_cast<double>(gold.size());
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  m.accuracy = pred == gold ? 1.0 : 0.0;
  m.precision *= 100.0;
  m.recall *= 100.0;
  m.f1 *= 100.0;
  m.accuracy *= 100.0;
  return m;
}

double f1_score(const TagSet& pred, const TagSet& gold) {
  if (gold.empty() || pred.empty()) return 0.0;
  const double hit = static_cast<double>(overlap(pred, gold));
  return 2.0 * hit / static_cast<double>(pred.size() + gold.size());
}

ScoredRun score_run(const std::map<std::string, TagSet>& predictions, const GoldSet& gold) {
  require_same_queries(predictions, gold, "run");
  ScoredRun run;
  for (const auto& [qid, entry] : gold) {
    if (entry.gold.empty()) {
      run.empty_gold.push_back(qid);
      continue;
    }
    run.rows.push_back({qid, entry.setting, multilabel_metrics(predictions.at(qid), entry.gold)});
  }
  return run;
}

AggregateResult aggregate(const std::vector<ScoredRun>& runs) {
  AggregateResult out;
  if (runs.empty()) {
    out.notes.push_back("no runs to aggregate");
    return out;
  }
  auto ids = [](const ScoredRun& r) {
    std::vector<std::string> v;
    for (const auto& q : r.rows) v.push_back(q.query_id);
    std::sort(v.begin(), v.end());
    return v;
  };
  const auto reference = ids(runs.front());
  for (const auto& r : runs) {
    if (ids(r) != reference) throw ValidationError("runs to aggregate cover different query sets");
  }

  for (const auto& id : runs.front().empty_gold) {
    out.notes.push_back("query '" + id + "' has empty gold; excluded");
  }
  std::set<std::string> settings;
  for (const auto& q : runs.front().rows) settings.insert(q.setting);
  std::vector<std::string> groups(settings.begin(), settings.end());
  groups.push_back("all");

  for (const auto& group : groups) {
    std::vector<QueryMetrics> per_run;
    std::size_t n = 0;
    for (const auto& r : runs) {
      std::vector<QueryMetrics> qs;
      for (const auto& q : r.rows) {
        if (group == "all" || q.setting == group) qs.push_back(q.metrics);
      }
      n = qs.size();
      if (!qs.empty()) per_run.push_back(mean_of(qs));
    }
    if (per_run.empty()) {
      out.notes.push_back("group '" + group + "' has no scored queries; omitted");
      continue;
    }
    MetricsRow row;
    row.group = group.empty() ? "(unlabelled)" : group;
    row.queries = n;
    row.runs = per_run.size();
    row.mean = mean_of(per_run);
    if (per_run.size() > 1) row.stddev = sample_std(per_run, row.mean);
    out.rows.push_back(row);
  }
  return out;
}

std::string format_metrics_table(const std::vector<MetricsRow>& rows, const std::string& title) {
  std::vector<std::vector<std::string>> cells{{"setting", "n", "runs", "Acc", "P", "R", "F1"}};
  for (const auto& r : rows) {
    auto sd = [&](double QueryMetrics::*f) -> std::optional<double> {
      return r.stddev ? std::optional<double>((*r.stddev).*f) : std::nullopt;
    };
    cells.push_back({r.group, std::to_string(r.queries), std::to_string(r.runs),
                     cell(r.mean.accuracy, sd(&QueryMetrics::accuracy)),
                     cell(r.mean.precision, sd(&QueryMetrics::precision)),
                     cell(r.mean.recall, sd(&QueryMetrics::recall)), cell(r.mean.f1, sd(&QueryMetrics::f1))});
  }
  return title + "\n" + render(cells);
}

json metrics_records(const std::vector<MetricsRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    json j{{"group", r.group}, {"queries", r.queries}, {"runs", r.runs}, {"mean", metrics_json(r.mean)}};
    if (r.stddev) j["std"] = metrics_json(*r.stddev);
    out.push_back(j);
  }
  return out;
}

std::vector<MethodRow> compare_methods(
    const std::vector<std::pair<std::string, std::map<std::string, TagSet>>>& methods,
    const GoldSet& gold) {
  std::vector<MethodRow> rows;
  for (const auto& [name, predictions] : methods) {
    require_same_queries(predictions, gold, "method '" + name + "'");
    const auto agg = aggregate({score_run(predictions, gold)});
    MethodRow row;
    row.method = name;
    for (const auto& r : agg.rows) {
      if (r.group == "all") row.metrics = r;
    }
    rows.push_back(row);
  }
  const std::pair<const char*, double QueryMetrics::*> fields[] = {{"accuracy", &QueryMetrics::accuracy},
                                                                   {"precision", &QueryMetrics::precision},
                                                                   {"recall", &QueryMetrics::recall},
                                                                   {"f1", &QueryMetrics::f1}};
  for (const auto& [label, field] : fields) {
    double best = -1.0;
    for (const auto& r : rows) best = std::max(best, r.metrics.mean.*field);
    for (auto& r : rows) {
      if (std::abs(r.metrics.mean.*field - best) < 1e-9) r.best.insert(label);
    }
  }
  return rows;
}

std::string format_comparison_table(const std::vector<MethodRow>& rows) {
  std::vector<std::vector<std::string>> cells{{"method", "n", "Acc", "P", "R", "F1"}};
  for (const auto& r : rows) {
    auto mark = [&](const char* label, double v) { return fixed2(v) + (r.best.count(label) ? "*" : " "); };
    cells.push_back({r.method, std::to_string(r.metrics.queries), mark("accuracy", r.metrics.mean.accuracy),
                     mark("precision", r.metrics.mean.precision), mark("recall", r.metrics.mean.recall),
                     mark("f1", r.metrics.mean.f1)});
  }
  return render(cells) + "* best in column\n";
}

}  // namespace kgroute
