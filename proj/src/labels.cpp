#include "kgroute/labels.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kgroute/error.hpp"
#include "kgroute/http.hpp"

namespace kgroute {

using nlohmann::json;

namespace {

template <class F>
void for_each_line(const std::string& path, const char* what, F&& f) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError(std::string("cannot open ") + what + " file '" + path + "'");
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(std::string("malformed ") + what + " record: " + e.what(), n, 0);
    }
    try {
      f(j, n);
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad ") + what + " record: " + e.what(), n, 0);
    }
  }
}

}  // namespace

double PerformanceRecord::at(const std::string& query, const std::string& agent) const {
  auto q = f1.find(query);
  if (q == f1.end()) throw ValidationError("no performance labels for query '" + query + "'");
  auto a = q->second.find(agent);
  if (a == q->second.end()) {
    throw ValidationError("no performance label for agent '" + agent + "' on query '" + query + "'");
  }
  return a->second;
}

bool PerformanceRecord::has(const std::string& query, const std::string& agent) const {
  auto q = f1.find(query);
  return q != f1.end() && q->second.count(agent) != 0;
}

void write_performance(const std::string& path, const PerformanceRecord& perf) {
  std::string out;
  for (const auto& [q, agents] : perf.f1) {
    for (const auto& [a, v] : agents) {
      json j{{"query", q}, {"agent", a}, {"f1", v}};
      if (perf.flagged.count({q, a})) j["flag"] = "missing";
      out += j.dump() + "\n";
    }
  }
  http::atomic_write(path, out);
}

PerformanceRecord read_performance(const std::string& path) {
  PerformanceRecord perf;
  for_each_line(path, "performance-label", [&](const json& j, std::size_t line) {
    const auto q = j.at("query").get<std::string>();
    const auto a = j.at("agent").get<std::string>();
    const double v = j.at("f1").get<double>();
    if (!(v >= 0.0 && v <= 1.0)) throw ParseError("F1 outside [0, 1]", line, 0);
    if (!perf.f1[q].emplace(a, v).second) {
      throw ParseError("duplicate label for (" + q + ", " + a + ")", line, 0);
    }
    if (j.contains("flag")) perf.flagged.insert({q, a});
  });
  return perf;
}

void write_answers(const std::string& path, const std::vector<AgentAnswer>& answers) {
  std::string out;
  for (const auto& a : answers) {
    json j{{"agent", a.agent_id}, {"query", a.query_id}, {"tags", a.tags}, {"context", a.context}};
    if (!a.out_of_vocabulary.empty()) j["oov"] = a.out_of_vocabulary;
    if (a.unparseable) j["unparseable"] = true;
    if (a.latency_ms) j["latency_ms"] = *a.latency_ms;
    out += j.dump() + "\n";
  }
  http::atomic_write(path, out);
}

std::vector<AgentAnswer> read_answers(const std::string& path) {
  std::vector<AgentAnswer> out;
  for_each_line(path, "answers", [&](const json& j, std::size_t) {
    AgentAnswer a;
    a.agent_id = j.at("agent").get<std::string>();
    a.query_id = j.at("query").get<std::string>();
    a.tags = j.at("tags").get<TagSet>();
    a.context = j.value("context", "full");
    if (j.contains("oov")) a.out_of_vocabulary = j.at("oov").get<TagSet>();
    a.unparseable = j.value("unparseable", false);
    if (j.contains("latency_ms")) a.latency_ms = j.at("latency_ms").get<double>();
    out.push_back(std::move(a));
  });
  return out;
}

PerformanceRecord score_agent_answers(const std::vector<AgentAnswer>& answers,
                                      const std::map<std::string, TagSet>& gold,
                                      const std::vector<std::string>& agents) {
  std::map<std::pair<std::string, std::string>, const AgentAnswer*> index;
  for (const auto& a : answers) {
    if (!index.emplace(std::make_pair(a.query_id, a.agent_id), &a).second) {
      throw ValidationError("duplicate answer for (" + a.query_id + ", " + a.agent_id + ")");
    }
  }
  PerformanceRecord perf;
  for (const auto& [q, tags] : gold) {
    auto& row = perf.f1[q];
    for (const auto& agent : agents) {
      auto it = index.find({q, agent});
      if (it == index.end() || it->second->unparseable) {
        row[agent] = 0.0;
        perf.flagged.insert({q, agent});
      } else {
        row[agent] = f1_score(it->second->tags, tags);
      }
    }
  }
  return perf;
}

}  // namespace kgroute
