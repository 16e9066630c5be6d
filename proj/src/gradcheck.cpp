#include "kgroute/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <vector>

#include <quadmath.h>

#include "kgroute/error.hpp"
#include "kgroute/random.hpp"

namespace kgroute {

using ad::Tensor;

namespace {

long double log_of(long double v) { return std::log(v); }
long double exp_of(long double v) { return std::exp(v); }
__float128 log_of(__float128 v) { return logq(v); }
__float128 exp_of(__float128 v) { return expq(v); }

template <class S>
struct Mat {
  Eigen::Index rows = 0, cols = 0;
  std::vector<S> v;

  Mat() = default;
  Mat(Eigen::Index r, Eigen::Index c) : rows(r), cols(c), v(static_cast<std::size_t>(r * c), S(0)) {}
  explicit Mat(const Tensor& t) : Mat(t.rows(), t.cols()) {
    for (Eigen::Index i = 0; i < t.size(); ++i) v[static_cast<std::size_t>(i)] = static_cast<S>(t.data()[i]);
  }
  S& at(Eigen::Index r, Eigen::Index c) { return v[static_cast<std::size_t>(r * cols + c)]; }
  const S& at(Eigen::Index r, Eigen::Index c) const { return v[static_cast<std::size_t>(r * cols + c)]; }
};

// out.row(i) += in.row(rows[i]) * w[w_row0 : w_row0 + in.cols, :]
template <class S>
void gather_mul(const Mat<S>& in, const std::vector<ad::Index>& rows, const Mat<S>& w, Mat<S>& out,
                Eigen::Index w_row0 = 0) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto oi = static_cast<Eigen::Index>(i);
    for (Eigen::Index k = 0; k < in.cols; ++k) {
      const S a = in.at(static_cast<Eigen::Index>(rows[i]), k);
      if (a == S(0)) continue;
      for (Eigen::Index j = 0; j < w.cols; ++j) out.at(oi, j) += a * w.at(w_row0 + k, j);
    }
  }
}

// Tape-free evaluation of the network in scalar type S. Parameters and
// inputs are widened once; single entries are then perturbed in place.
template <class S>
class Reference {
 public:
  Reference(const GraphPlan& plan, const Tensor& x, const ParamStore& params, const Tensor& target,
            CheckLoss loss)
      : plan_(plan), linear_(params.config().linear), layers_(params.config().layers),
        hidden_(params.config().hidden), loss_(loss), x_(x), target_(target) {
    for (const auto& [name, arr] : params.arrays()) w_.emplace(name, Mat<S>(arr));
    for (const auto& [type, rows] : plan_.types) proj_.push_back(&w_.at(ParamStore::proj_name(type)));
    for (int l = 1; l <= layers_; ++l) {
      std::vector<const Mat<S>*> msg, gate, upd;
      for (const auto& b : plan_.relations) {
        msg.push_back(&w_.at(ParamStore::message_name(l, b.key)));
        gate.push_back(&w_.at(ParamStore::gate_name(l, b.key)));
      }
      for (const auto& [type, rows] : plan_.types) upd.push_back(&w_.at(ParamStore::update_name(l, type)));
      msg_.push_back(std::move(msg));
      gate_.push_back(std::move(gate));
      upd_.push_back(std::move(upd));
    }
    w1_ = &w_.at("scorer/W1");
    b1_ = &w_.at("scorer/b1");
    w2_ = &w_.at("scorer/W2");
    b2_ = &w_.at("scorer/b2");
  }

  S& param(const std::string& name, Eigen::Index i) { return w_.at(name).v[static_cast<std::size_t>(i)]; }
  S& input(Eigen::Index i) { return x_.v[static_cast<std::size_t>(i)]; }

  S loss(std::vector<bool>* pattern) const {
    auto act = [&](Mat<S>& m) {
      for (auto& e : m.v) {
        if (pattern) pattern->push_back(e > S(0));
        if (!linear_ && !(e > S(0))) e = S(0);
      }
    };
    const auto n = static_cast<Eigen::Index>(plan_.nodes);
    const Eigen::Index h = hidden_;
    Mat<S> state(n, h);
    std::size_t ti = 0;
    for (const auto& [type, rows] : plan_.types) {
      Mat<S> part(static_cast<Eigen::Index>(rows.size()), h);
      gather_mul(x_, rows, *proj_[ti++], part);
      act(part);
      scatter(part, rows, state);
    }
    for (int l = 1; l <= layers_; ++l) {
      const auto li = static_cast<std::size_t>(l - 1);
      Mat<S> merged(n, h);
      for (std::size_t bi = 0; bi < plan_.relations.size(); ++bi) {
        const auto& b = plan_.relations[bi];
        Mat<S> msg(static_cast<Eigen::Index>(b.sources.size()), h);
        gather_mul(state, b.sources, *msg_[li][bi], msg);
        act(msg);
        Mat<S> agg(n, h);
        std::vector<S> count(static_cast<std::size_t>(n), S(0));
        for (std::size_t e = 0; e < b.src.size(); ++e) {
          for (Eigen::Index j = 0; j < h; ++j) {
            agg.at(static_cast<Eigen::Index>(b.dst[e]), j) += msg.at(static_cast<Eigen::Index>(b.src[e]), j);
          }
          count[b.dst[e]] += S(1);
        }
        const S gate = gate_[li][bi]->v[0];
        for (Eigen::Index i = 0; i < n; ++i) {
          const S c = count[static_cast<std::size_t>(i)];
          if (c == S(0)) continue;
          for (Eigen::Index j = 0; j < h; ++j) merged.at(i, j) += gate * (agg.at(i, j) / c);
        }
      }
      Mat<S> next(n, h);
      ti = 0;
      for (const auto& [type, rows] : plan_.types) {
        const Mat<S>& u = *upd_[li][ti++];
        Mat<S> part(static_cast<Eigen::Index>(rows.size()), h);
        gather_mul(state, rows, u, part);
        gather_mul(merged, rows, u, part, h);
        scatter(part, rows, next);
      }
      state = std::move(next);
    }

    const Mat<S>& w1 = *w1_;
    const Mat<S>& b1 = *b1_;
    const Mat<S>& w2 = *w2_;
    const S b2 = b2_->v[0];
    const auto agents = static_cast<Eigen::Index>(plan_.agents.size());
    std::vector<S> scores(static_cast<std::size_t>(agents));
    for (Eigen::Index a = 0; a < agents; ++a) {
      Mat<S> pre(1, h);
      for (Eigen::Index j = 0; j < h; ++j) pre.at(0, j) = b1.at(0, j);
      const std::vector<ad::Index> q{plan_.query};
      const std::vector<ad::Index> ag{plan_.agents[static_cast<std::size_t>(a)]};
      gather_mul(state, q, w1, pre);
      gather_mul(state, ag, w1, pre, h);
      act(pre);
      S s = b2;
      for (Eigen::Index j = 0; j < h; ++j) s += pre.at(0, j) * w2.at(j, 0);
      scores[static_cast<std::size_t>(a)] = s;
    }

    if (loss_ == CheckLoss::kLinearScores) {
      S total = S(0);
      for (Eigen::Index a = 0; a < agents; ++a) total += target_.v[static_cast<std::size_t>(a)] * scores[static_cast<std::size_t>(a)];
      return total;
    }
    S mx = scores[0];
    for (const S& s : scores) mx = s > mx ? s : mx;
    S z = S(0);
    for (const S& s : scores) z += exp_of(s - mx);
    S kl = S(0);
    for (Eigen::Index a = 0; a < agents; ++a) {
      const S pt = target_.v[static_cast<std::size_t>(a)];
      if (!(pt > S(0))) continue;
      S p = exp_of(scores[static_cast<std::size_t>(a)] - mx) / z;
      if (p < static_cast<S>(ad::kLogClamp)) p = static_cast<S>(ad::kLogClamp);
      kl += pt * (log_of(pt) - log_of(p));
    }
    return kl;
  }

 private:
  static void scatter(const Mat<S>& part, const std::vector<ad::Index>& rows, Mat<S>& out) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (Eigen::Index j = 0; j < out.cols; ++j) {
        out.at(static_cast<Eigen::Index>(rows[i]), j) = part.at(static_cast<Eigen::Index>(i), j);
      }
    }
  }

  const GraphPlan& plan_;
  bool linear_;
  int layers_;
  Eigen::Index hidden_;
  CheckLoss loss_;
  Mat<S> x_;
  Mat<S> target_;
  std::map<std::string, Mat<S>> w_;
  std::vector<const Mat<S>*> proj_;
  std::vector<std::vector<const Mat<S>*>> msg_, gate_, upd_;
  const Mat<S>* w1_;
  const Mat<S>* b1_;
  const Mat<S>* w2_;
  const Mat<S>* b2_;
};

template <class S>
GradCheckReport run_check(const GraphPlan& plan, const Tensor& embeddings, const ParamStore& params,
                          const Tensor& target, const GradCheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  GradCheckReport rep;

  ForwardOptions fopts;
  fopts.input_grad = true;
  fopts.tape.corrupt = options.corrupt;
  fopts.tape.factor = options.corrupt_factor;
  auto fwd = forward(plan, embeddings, params, fopts);
  ad::Var loss;
  if (options.loss == CheckLoss::kKl) {
    loss = ad::kl_div(fwd.tape, target, fwd.probs);
  } else {
    loss = ad::matmul(fwd.tape, fwd.scores, fwd.tape.constant(target.transpose()));
  }
  fwd.tape.backward(loss);

  Reference<S> ref(plan, embeddings, params, target, options.loss);
  std::vector<bool> plus_pattern, minus_pattern;
  // Perturbs one widened entry to the doubles orig +/- eps; the divisor is
  // their exact spacing.
  auto probe = [&](S& slot, double orig, double analytic, const std::string& where) {
    const double hi = orig + options.eps, lo = orig - options.eps;
    plus_pattern.clear();
    minus_pattern.clear();
    slot = static_cast<S>(hi);
    const S plus = ref.loss(&plus_pattern);
    slot = static_cast<S>(lo);
    const S minus = ref.loss(&minus_pattern);
    slot = static_cast<S>(orig);
    if (plus_pattern != minus_pattern) {
      ++rep.excluded_kinks;
      return;
    }
    const double numeric = static_cast<double>((plus - minus) / (static_cast<S>(hi) - static_cast<S>(lo)));
    const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
    const double err = std::abs(analytic - numeric) / denom;
    ++rep.checked;
    if (err > rep.max_rel_error || rep.worst_location.empty()) {
      rep.max_rel_error = err;
      rep.worst_location = where;
      rep.worst_analytic = analytic;
      rep.worst_numeric = numeric;
    }
  };

  for (const auto& [name, arr] : params.arrays()) {
    auto pv = fwd.params.find(name);
    const Tensor* grad = pv != fwd.params.end() ? &fwd.tape.grad(pv->second) : nullptr;
    for (Eigen::Index i = 0; i < arr.size(); ++i) {
      probe(ref.param(name, i), arr.data()[i], grad ? grad->data()[i] : 0.0,
            name + "[" + std::to_string(i / arr.cols()) + "," + std::to_string(i % arr.cols()) + "]");
    }
  }

  const Tensor& gx = fwd.tape.grad(fwd.input);
  Rng rng(options.seed);
  const auto total = static_cast<std::uint64_t>(embeddings.size());
  for (std::size_t s = 0; s < options.input_samples && total > 0; ++s) {
    const auto i = static_cast<Eigen::Index>(rng.below(total));
    probe(ref.input(i), embeddings.data()[i], gx.data()[i],
          "input[" + std::to_string(i / embeddings.cols()) + "," + std::to_string(i % embeddings.cols()) + "]");
  }

  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace

GradCheckReport finite_diff_check(const GraphPlan& plan, const Tensor& embeddings,
                                  const ParamStore& params, const Tensor& target,
                                  const GradCheckOptions& options) {
  if (options.precision == FdPrecision::kQuad) {
    return run_check<__float128>(plan, embeddings, params, target, options);
  }
  return run_check<long double>(plan, embeddings, params, target, options);
}

double reference_loss(const GraphPlan& plan, const Tensor& embeddings, const ParamStore& params,
                      const Tensor& target, CheckLoss loss) {
  return static_cast<double>(Reference<long double>(plan, embeddings, params, target, loss).loss(nullptr));
}

GradCheckCase make_gradcheck_case(const GradCheckCaseSpec& spec) {
  if (spec.nodes < spec.agents + 3) throw ConfigError("gradcheck case needs at least two entities");
  if (spec.relations == 0) throw ConfigError("gradcheck case needs at least one relation");
  Rng rng(spec.seed);
  const std::size_t n_ent = spec.nodes - spec.agents - 1;
  static const char* kinds[] = {"food", "user", "nutrition_tag"};

  QueryInstance q;
  q.id = "gradcheck";
  q.question = "gradient check query";
  q.context.record_id = q.id;
  for (std::size_t i = 0; i < n_ent; ++i) {
    const std::string id = "e" + std::to_string(i);
    q.context.nodes.push_back(Node{id, NodeKind::kEntity, kinds[i % 3], id});
  }
  std::set<Triple> triples;
  // Spanning chain so every entity is reachable, then extra random edges.
  for (std::size_t i = 1; i < n_ent; ++i) {
    const std::size_t j = rng.below(i);
    triples.insert({"e" + std::to_string(j), "r" + std::to_string(rng.below(spec.relations)),
                    "e" + std::to_string(i)});
  }
  for (std::size_t r = 0; r < spec.relations; ++r) {
    const auto a = rng.below(n_ent), b = rng.below(n_ent);
    triples.insert({"e" + std::to_string(a), "r" + std::to_string(r), "e" + std::to_string(b)});
  }
  q.context.triples.assign(triples.begin(), triples.end());
  q.mentions = {"e0"};
  if (n_ent > 1) q.mentions.push_back("e1");

  std::vector<AgentSpec> pool;
  for (std::size_t a = 0; a < spec.agents; ++a) {
    AgentSpec s;
    s.id = "g" + std::to_string(a);
    s.backbone = "bb" + std::to_string(a / 6);
    s.strategy = kAllStrategies[a % 6];
    s.description = "check agent " + std::to_string(a);
    s.attends[q.id] = {"e" + std::to_string(rng.below(n_ent))};
    pool.push_back(std::move(s));
  }

  GradCheckCase c;
  c.graph = extend_graph(q, pool);
  const auto rows = static_cast<Eigen::Index>(c.graph.nodes().size());
  c.embeddings.resize(rows, static_cast<Eigen::Index>(spec.input_dim));
  for (Eigen::Index i = 0; i < c.embeddings.size(); ++i) c.embeddings.data()[i] = rng.uniform(-1, 1);

  ModelConfig mc;
  mc.layers = spec.layers;
  mc.hidden = spec.hidden;
  mc.strict_grid = false;
  mc.linear = spec.linear;
  c.params = init_params(mc, spec.input_dim, c.graph.relation_keys(), c.graph.type_keys(), spec.seed + 1);
  // Move gates and biases off their special initial values.
  for (auto& [name, arr] : c.params.arrays()) {
    if (name.find("/gate/") != std::string::npos || name.rfind("scorer/b", 0) == 0) {
      for (Eigen::Index i = 0; i < arr.size(); ++i) arr.data()[i] += rng.uniform(-0.3, 0.3);
    }
  }

  Tensor scores(1, static_cast<Eigen::Index>(spec.agents));
  for (Eigen::Index i = 0; i < scores.size(); ++i) scores.data()[i] = rng.uniform(-2, 2);
  c.target = ad::softmax(scores);
  return c;
}

}  // namespace kgroute
