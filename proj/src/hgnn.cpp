#include "kgroute/hgnn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kgroute/error.hpp"
#include "kgroute/http.hpp"
#include "kgroute/random.hpp"

namespace kgroute {

using nlohmann::json;
using ad::Index;
using ad::Tensor;
using ad::Var;

namespace {

constexpr std::string_view kContainerMagic = "KGROUTE-CONTAINER 1";
constexpr int kParamsVersion = 1;

using ShapeList = std::vector<std::pair<std::string, std::pair<Index, Index>>>;

ShapeList expected_shapes(const ModelConfig& c, std::size_t d_in,
                          const std::vector<std::string>& relations,
                          const std::vector<std::string>& types) {
  const auto h = static_cast<Index>(c.hidden);
  ShapeList out;
  for (const auto& t : types) out.push_back({ParamStore::proj_name(t), {d_in, h}});
  for (int l = 1; l <= c.layers; ++l) {
    for (const auto& r : relations) {
      out.push_back({ParamStore::message_name(l, r), {h, h}});
      out.push_back({ParamStore::gate_name(l, r), {1, 1}});
    }
    for (const auto& t : types) out.push_back({ParamStore::update_name(l, t), {2 * h, h}});
  }
  out.push_back({"scorer/W1", {2 * h, h}});
  out.push_back({"scorer/b1", {1, h}});
  out.push_back({"scorer/W2", {h, 1}});
  out.push_back({"scorer/b2", {1, 1}});
  return out;
}

json config_json(const ModelConfig& c) {
  return json{{"layers", c.layers}, {"hidden", c.hidden}, {"seed", c.seed}, {"strict_grid", c.strict_grid},
              {"linear", c.linear}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.layers = j.at("layers").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.strict_grid = j.value("strict_grid", true);
  c.linear = j.value("linear", false);
  return c;
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace

void ModelConfig::validate() const {
  if (layers < 1 || hidden < 1) throw ConfigError("layers and hidden must be positive");
  if (strict_grid) {
    if (layers > 4) throw ConfigError("layers must be in 1..4, got " + std::to_string(layers));
    if (hidden != 64 && hidden != 128 && hidden != 256) {
      throw ConfigError("hidden must be 64, 128 or 256, got " + std::to_string(hidden));
    }
  }
}

// ---------------------------------------------------------------------------
// ParamStore

std::string ParamStore::proj_name(const std::string& type) { return "proj/" + type; }
std::string ParamStore::message_name(int layer, const std::string& relation) {
  return "L" + std::to_string(layer) + "/W/" + relation;
}
std::string ParamStore::gate_name(int layer, const std::string& relation) {
  return "L" + std::to_string(layer) + "/gate/" + relation;
}
std::string ParamStore::update_name(int layer, const std::string& type) {
  return "L" + std::to_string(layer) + "/U/" + type;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw ContractError("no parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw ContractError("no parameter '" + name + "'");
  return it->second;
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (!(a.config_ == b.config_) || a.input_dim_ != b.input_dim_ || a.relations_ != b.relations_ ||
      a.types_ != b.types_ || a.arrays_.size() != b.arrays_.size()) {
    return false;
  }
  for (auto ia = a.arrays_.begin(), ib = b.arrays_.begin(); ia != a.arrays_.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.rows() != ib->second.rows() ||
        ia->second.cols() != ib->second.cols()) {
      return false;
    }
    if (std::memcmp(ia->second.data(), ib->second.data(),
                    static_cast<std::size_t>(ia->second.size()) * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : arrays_) n += static_cast<std::size_t>(t.size());
  return n;
}

json ParamStore::manifest() const {
  json arrays = json::array();
  for (const auto& [name, t] : arrays_) arrays.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  return json{{"format", "kgroute-params"},
              {"version", kParamsVersion},
              {"config", config_json(config_)},
              {"input_dim", input_dim_},
              {"relations", relations_},
              {"types", types_},
              {"arrays", arrays}};
}

ParamStore ParamStore::from_manifest(const json& m) {
  try {
    if (m.at("format").get<std::string>() != "kgroute-params") {
      throw UnsupportedSchemaError("not a parameter manifest");
    }
    if (m.at("version").get<int>() != kParamsVersion) {
      throw UnsupportedSchemaError("unsupported parameter manifest version " + m.at("version").dump());
    }
    ParamStore p;
    p.config_ = config_from_json(m.at("config"));
    p.config_.validate();
    p.input_dim_ = m.at("input_dim").get<std::size_t>();
    p.relations_ = m.at("relations").get<std::vector<std::string>>();
    p.types_ = m.at("types").get<std::vector<std::string>>();
    std::map<std::string, std::pair<Index, Index>> listed;
    for (const auto& a : m.at("arrays")) {
      listed[a.at("name").get<std::string>()] = {a.at("rows").get<Index>(), a.at("cols").get<Index>()};
    }
    const auto expected = expected_shapes(p.config_, p.input_dim_, p.relations_, p.types_);
    if (listed.size() != expected.size()) throw ValidationError("manifest array count mismatch");
    for (const auto& [name, shape] : expected) {
      auto it = listed.find(name);
      if (it == listed.end()) throw ValidationError("manifest lacks array '" + name + "'");
      if (it->second != shape) {
        throw ValidationError("manifest shape mismatch for '" + name + "': " +
                              std::to_string(it->second.first) + "x" + std::to_string(it->second.second) +
                              " vs expected " + std::to_string(shape.first) + "x" +
                              std::to_string(shape.second));
      }
      p.arrays_[name] = Tensor::Zero(static_cast<Eigen::Index>(shape.first),
                                     static_cast<Eigen::Index>(shape.second));
    }
    return p;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed parameter manifest: ") + e.what());
  }
}

ParamStore init_params(const ModelConfig& config, std::size_t input_dim,
                       const std::set<std::string>& relations, const std::set<std::string>& types,
                       std::uint64_t seed) {
  config.validate();
  if (relations.empty()) throw ConfigError("cannot initialise a model with no relations");
  if (types.empty()) throw ConfigError("cannot initialise a model with no node types");
  if (input_dim == 0) throw ConfigError("input dimension must be positive");
  ParamStore p;
  p.config_ = config;
  p.config_.seed = seed;
  p.input_dim_ = input_dim;
  p.relations_.assign(relations.begin(), relations.end());
  p.types_.assign(types.begin(), types.end());
  Rng rng(seed);
  for (const auto& [name, shape] : expected_shapes(p.config_, input_dim, p.relations_, p.types_)) {
    const auto rows = static_cast<Eigen::Index>(shape.first);
    const auto cols = static_cast<Eigen::Index>(shape.second);
    Tensor t;
    if (name.find("/gate/") != std::string::npos) {
      t = Tensor::Ones(rows, cols);
    } else if (name == "scorer/b1" || name == "scorer/b2") {
      t = Tensor::Zero(rows, cols);
    } else {
      const double bound = std::sqrt(6.0 / static_cast<double>(shape.first + shape.second));
      t.resize(rows, cols);
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-bound, bound);
    }
    p.arrays_.emplace(name, std::move(t));
  }
  return p;
}

std::set<std::string> collect_relations(const std::vector<RoutedGraph>& graphs) {
  std::set<std::string> out;
  for (const auto& g : graphs) {
    auto r = g.relation_keys();
    out.insert(r.begin(), r.end());
  }
  return out;
}

std::set<std::string> collect_types(const std::vector<RoutedGraph>& graphs) {
  std::set<std::string> out;
  for (const auto& g : graphs) {
    auto t = g.type_keys();
    out.insert(t.begin(), t.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward

GraphPlan make_plan(const RoutedGraph& g) {
  GraphPlan plan;
  plan.nodes = g.nodes().size();
  for (Index i = 0; i < g.nodes().size(); ++i) plan.types[g.nodes()[i].type_key()].push_back(i);
  std::map<std::string, GraphPlan::RelationBlock> blocks;
  std::map<std::string, std::map<Index, Index>> local;
  for (const auto& e : g.edges()) {
    const std::string key = e.relation.key();
    auto& b = blocks[key];
    b.key = key;
    auto& slot = local[key];
    auto [it, inserted] = slot.emplace(e.src, b.sources.size());
    if (inserted) b.sources.push_back(e.src);
    b.src.push_back(it->second);
    b.dst.push_back(e.dst);
  }
  for (auto& [_, b] : blocks) plan.relations.push_back(std::move(b));
  plan.query = g.query_index();
  plan.agents = g.agent_indices();
  return plan;
}

std::vector<double> ForwardResult::distribution() const {
  const Tensor& p = tape.value(probs);
  return std::vector<double>(p.data(), p.data() + p.size());
}

Var ForwardResult::site(StateSite s) const {
  switch (s) {
    case StateSite::kInput:
      return input;
    case StateSite::kInitial:
      return states.front();
    case StateSite::kFinal:
      return states.back();
  }
  throw ContractError("unknown state site");
}

ForwardResult forward(const GraphPlan& plan, const Tensor& embeddings, const ParamStore& params,
                      const ForwardOptions& options) {
  if (static_cast<std::size_t>(embeddings.rows()) != plan.nodes) {
    throw ContractError("embedding rows (" + std::to_string(embeddings.rows()) +
                        ") != graph nodes (" + std::to_string(plan.nodes) + ")");
  }
  if (static_cast<std::size_t>(embeddings.cols()) != params.input_dim()) {
    throw ContractError("embedding dimension " + std::to_string(embeddings.cols()) +
                        " != model input dimension " + std::to_string(params.input_dim()));
  }
  if (plan.agents.empty()) throw ContractError("graph has no agent nodes");

  ForwardResult r{ad::Tape(options.tape), {}, {}, {}, {}, {}};
  ad::Tape& t = r.tape;
  auto param = [&](const std::string& name) -> Var {
    auto it = r.params.find(name);
    if (it != r.params.end()) return it->second;
    const Var v = t.parameter(params.at(name));
    r.params.emplace(name, v);
    return v;
  };
  const bool linear = params.config().linear;
  auto act = [&](Var x) { return linear ? x : ad::relu(t, x); };
  const auto& known_types = params.types();
  const auto& known_rel = params.relations();
  for (const auto& [type, _] : plan.types) {
    if (!std::binary_search(known_types.begin(), known_types.end(), type)) {
      throw UnsupportedSchemaError("node type '" + type + "' was not seen in training");
    }
  }
  for (const auto& b : plan.relations) {
    if (!std::binary_search(known_rel.begin(), known_rel.end(), b.key)) {
      throw UnsupportedSchemaError("relation '" + b.key + "' was not seen in training");
    }
  }

  r.input = options.input_grad ? t.input(embeddings, true) : t.constant(embeddings);
  const Index n = plan.nodes;

  std::vector<std::vector<Index>> type_rows;
  std::vector<std::string> type_keys;
  for (const auto& [type, rows] : plan.types) {
    type_keys.push_back(type);
    type_rows.push_back(rows);
  }

  std::vector<Var> parts;
  parts.reserve(type_keys.size());
  for (std::size_t k = 0; k < type_keys.size(); ++k) {
    const Var x = ad::gather_rows(t, r.input, type_rows[k]);
    parts.push_back(act(ad::matmul(t, x, param(ParamStore::proj_name(type_keys[k])))));
  }
  Var h = ad::assemble_rows(t, parts, type_rows, n);
  r.states.push_back(h);

  const auto hidden = static_cast<Eigen::Index>(params.config().hidden);
  for (int l = 1; l <= params.config().layers; ++l) {
    Var merged;
    for (const auto& b : plan.relations) {
      const Var src = ad::gather_rows(t, h, b.sources);
      const Var msg = act(ad::matmul(t, src, param(ParamStore::message_name(l, b.key))));
      const Var agg = ad::segment_mean(t, msg, b.src, b.dst, n);
      const Var term = ad::scale_by_scalar(t, agg, param(ParamStore::gate_name(l, b.key)));
      merged = merged.valid() ? ad::add(t, merged, term) : term;
    }
    if (!merged.valid()) merged = t.constant(Tensor::Zero(static_cast<Eigen::Index>(n), hidden));
    const Var cat = ad::concat_cols(t, h, merged);
    parts.clear();
    for (std::size_t k = 0; k < type_keys.size(); ++k) {
      const Var x = ad::gather_rows(t, cat, type_rows[k]);
      parts.push_back(ad::matmul(t, x, param(ParamStore::update_name(l, type_keys[k]))));
    }
    h = ad::assemble_rows(t, parts, type_rows, n);
    r.states.push_back(h);
  }

  const std::vector<Index> q_rows(plan.agents.size(), plan.query);
  const Var hq = ad::gather_rows(t, h, q_rows);
  const Var ha = ad::gather_rows(t, h, plan.agents);
  const Var z = ad::concat_cols(t, hq, ha);
  const Var hid = act(ad::add_bias(t, ad::matmul(t, z, param("scorer/W1")), param("scorer/b1")));
  const Var s = ad::add_bias(t, ad::matmul(t, hid, param("scorer/W2")), param("scorer/b2"));
  r.scores = ad::transpose(t, s);
  r.probs = ad::softmax_row(t, r.scores);
  return r;
}

ForwardResult forward(const RoutedGraph& g, const Tensor& embeddings, const ParamStore& params,
                      const ForwardOptions& options) {
  return forward(make_plan(g), embeddings, params, options);
}

std::vector<double> route_distribution(const std::vector<double>& scores) {
  if (scores.empty()) throw ContractError("route_distribution needs at least one agent");
  Tensor row(1, static_cast<Eigen::Index>(scores.size()));
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw ContractError("non-finite routing score");
    row(0, static_cast<Eigen::Index>(i)) = scores[i];
  }
  const Tensor p = ad::softmax(row);
  return std::vector<double>(p.data(), p.data() + p.size());
}

// ---------------------------------------------------------------------------
// Container I/O

void write_container(const std::string& path, const json& manifest,
                     const std::vector<std::pair<std::string, const Tensor*>>& arrays) {
  json listing = json::array();
  std::size_t scalars = 0;
  for (const auto& [name, t] : arrays) {
    listing.push_back({{"name", name}, {"rows", t->rows()}, {"cols", t->cols()}});
    scalars += static_cast<std::size_t>(t->size());
  }
  json head{{"meta", manifest}, {"arrays", listing}, {"payload_bytes", scalars * 8}};
  std::string out;
  out.reserve(scalars * 8 + 4096);
  out.append(kContainerMagic).push_back('\n');
  out.append(head.dump()).push_back('\n');
  for (const auto& [_, t] : arrays) {
    for (Eigen::Index i = 0; i < t->size(); ++i) put_f64(out, t->data()[i]);
  }
  http::atomic_write(path, out);
}

std::pair<json, std::map<std::string, Tensor>> read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open checkpoint '" + path + "'");
  std::string magic, header;
  std::getline(in, magic);
  if (magic != kContainerMagic) throw UnsupportedSchemaError("'" + path + "' is not a kgroute checkpoint");
  std::getline(in, header);
  json head;
  try {
    head = json::parse(header);
  } catch (const json::exception& e) {
    throw ValidationError("corrupt checkpoint manifest in '" + path + "': " + e.what());
  }
  std::vector<std::tuple<std::string, Index, Index>> listing;
  std::size_t scalars = 0;
  try {
    for (const auto& a : head.at("arrays")) {
      listing.emplace_back(a.at("name").get<std::string>(), a.at("rows").get<Index>(),
                           a.at("cols").get<Index>());
      scalars += std::get<1>(listing.back()) * std::get<2>(listing.back());
    }
    if (head.at("payload_bytes").get<std::size_t>() != scalars * 8) {
      throw ValidationError("checkpoint payload size disagrees with its manifest");
    }
  } catch (const json::exception& e) {
    throw ValidationError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  const std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (payload.size() != scalars * 8) {
    throw ValidationError("checkpoint '" + path + "' is truncated or has trailing bytes");
  }
  std::map<std::string, Tensor> arrays;
  const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
  for (const auto& [name, rows, cols] : listing) {
    Tensor t(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < t.size(); ++i, p += 8) t.data()[i] = get_f64(p);
    if (!arrays.emplace(name, std::move(t)).second) throw ValidationError("duplicate array '" + name + "'");
  }
  return {head.at("meta"), std::move(arrays)};
}

void save_params(const std::string& path, const ParamStore& params) {
  std::vector<std::pair<std::string, const Tensor*>> arrays;
  for (const auto& [name, t] : params.arrays()) arrays.emplace_back(name, &t);
  write_container(path, params.manifest(), arrays);
}

ParamStore load_params(const std::string& path) {
  auto [meta, arrays] = read_container(path);
  const json& m = meta.contains("params") ? meta.at("params") : meta;
  ParamStore p = ParamStore::from_manifest(m);
  for (auto& [name, t] : p.arrays()) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw ValidationError("checkpoint lacks array '" + name + "'");
    if (it->second.rows() != t.rows() || it->second.cols() != t.cols()) {
      throw ValidationError("checkpoint array '" + name + "' has the wrong shape");
    }
    t = std::move(it->second);
  }
  return p;
}

}  // namespace kgroute
