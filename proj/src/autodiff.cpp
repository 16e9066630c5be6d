#include "kgroute/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "kgroute/error.hpp"

namespace kgroute::ad {

namespace {

std::string shape_of(const Tensor& t) {
  return "(" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + ")";
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ContractError(std::string(op) + ": incompatible shapes " + shape_of(a) + " and " +
                      shape_of(b));
}

}  // namespace

std::string to_string(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatmul: return "matmul";
    case Op::kAddBias: return "add_bias";
    case Op::kAdd: return "add";
    case Op::kConcatCols: return "concat_cols";
    case Op::kMeanRows: return "mean_rows";
    case Op::kScaleByScalar: return "scale_by_scalar";
    case Op::kScale: return "scale";
    case Op::kRelu: return "relu";
    case Op::kSoftmaxRow: return "softmax_row";
    case Op::kKlDiv: return "kl_div";
    case Op::kNll: return "nll";
    case Op::kGatherRows: return "gather_rows";
    case Op::kSegmentMean: return "segment_mean";
    case Op::kAssembleRows: return "assemble_rows";
    case Op::kTranspose: return "transpose";
    case Op::kHalfSumSquares: return "half_sum_squares";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::input(Tensor value, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(const Tensor& value) {
  Node n;
  n.op = Op::kLeaf;
  n.borrowed = &value;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

void Tape::check_var(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) {
    throw ContractError("variable is not recorded on this tape");
  }
}

const Tensor& Tape::value_at(Index id) const {
  const Node& n = nodes_[id];
  return n.borrowed != nullptr ? *n.borrowed : n.value;
}

const Tensor& Tape::value(Var v) const {
  check_var(v);
  return value_at(v.id);
}

Op Tape::op(Var v) const {
  check_var(v);
  return nodes_[v.id].op;
}

bool Tape::requires_grad(Var v) const {
  check_var(v);
  return nodes_[v.id].requires_grad;
}

Var Tape::record(Op op, Tensor value, std::vector<Index> inputs, Adjoint adjoint) {
#if !defined(NDEBUG) || defined(KGROUTE_CHECK_FINITE)
  if (!value.allFinite()) {
    throw ContractError(to_string(op) + " produced a non-finite value");
  }
#endif
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [&](Index i) { return nodes_[i].requires_grad; });
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.adjoint = std::move(adjoint);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tensor& Tape::grad_ref(Index id) {
  Node& n = nodes_[id];
  if (!n.touched) {
    const Tensor& v = value_at(id);
    n.grad = Tensor::Zero(v.rows(), v.cols());
    n.touched = true;
  }
  return n.grad;
}

void Tape::note_relu(const Tensor& pre) {
  if (!options_.track_relu) return;
  const auto* p = pre.data();
  for (Eigen::Index i = 0; i < pre.size(); ++i) relu_pattern_.push_back(p[i] > 0.0);
}

void Tape::backward(Var loss) {
  check_var(loss);
  if (backward_done_) throw ContractError("backward() already consumed this tape");
  const Tensor& l = value_at(loss.id);
  if (l.rows() != 1 || l.cols() != 1) throw ContractError("backward() needs a scalar loss");
  backward_done_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad_ref(loss.id)(0, 0) = 1.0;
  for (Index i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.touched || !n.adjoint) continue;
    if (options_.corrupt && *options_.corrupt == n.op) n.grad *= options_.factor;
    n.adjoint(*this, i);
  }
}

const Tensor& Tape::grad_at(Var v) const {
  check_var(v);
  if (!backward_done_) throw ContractError("gradient requested before backward()");
  const Node& n = nodes_[v.id];
  if (!n.requires_grad) throw ContractError("gradient requested for a non-differentiable node");
  if (n.touched) return n.grad;
  const Tensor& val = value_at(v.id);
  zero_cache_.push_back(Tensor::Zero(val.rows(), val.cols()));
  return zero_cache_.back();
}

const Tensor& Tape::grad(Var leaf) const {
  check_var(leaf);
  if (nodes_[leaf.id].op != Op::kLeaf) throw ContractError("gradient requested for a non-leaf");
  return grad_at(leaf);
}

// ---------------------------------------------------------------------------
// Primitives

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  Tensor out(av.rows(), bv.cols());
  out.noalias() = av * bv;
  return t.record(Op::kMatmul, std::move(out), {a.id, b.id}, [a, b](Tape& tp, Index self) {
    const Tensor& g = tp.upstream(self);
    if (tp.needs_grad(a.id)) tp.grad_ref(a.id).noalias() += g * tp.value_at(b.id).transpose();
    if (tp.needs_grad(b.id)) tp.grad_ref(b.id).noalias() += tp.value_at(a.id).transpose() * g;
  });
}

Var add_bias(Tape& t, Var x, Var bias) {
  const Tensor& xv = t.value(x);
  const Tensor& bv = t.value(bias);
  if (bv.rows() != 1 || bv.cols() != xv.cols()) shape_error("add_bias", xv, bv);
  Tensor out = xv;
  out.rowwise() += bv.row(0);
  return t.record(Op::kAddBias, std::move(out), {x.id, bias.id}, [x, bias](Tape& tp, Index self) {
    const Tensor& g = tp.upstream(self);
    if (tp.needs_grad(x.id)) tp.grad_ref(x.id) += g;
    if (tp.needs_grad(bias.id)) tp.grad_ref(bias.id) += g.colwise().sum();
  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_error("add", av, bv);
  Tensor out = av + bv;
  return t.record(Op::kAdd, std::move(out), {a.id, b.id}, [a, b](Tape& tp, Index self) {
    const Tensor& g = tp.upstream(self);
    if (tp.needs_grad(a.id)) tp.grad_ref(a.id) += g;
    if (tp.needs_grad(b.id)) tp.grad_ref(b.id) += g;
  });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  const Eigen::Index rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  std::vector<Index> ids;
  std::vector<Eigen::Index> offsets;
  for (Var p : parts) {
    const Tensor& v = t.value(p);
    if (v.rows() != rows) shape_error("concat_cols", t.value(parts[0]), v);
    offsets.push_back(cols);
    cols += v.cols();
    ids.push_back(p.id);
  }
  Tensor out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = t.value(parts[k]);
    out.middleCols(offsets[k], v.cols()) = v;
  }
  return t.record(Op::kConcatCols, std::move(out), ids, [ids, offsets](Tape& tp, Index self) {
    const Tensor& g = tp.upstream(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.needs_grad(ids[k])) continue;
      Tensor& gk = tp.grad_ref(ids[k]);
      gk += g.middleCols(offsets[k], gk.cols());
    }
  });
}

Var concat_cols(Tape& t, Var a, Var b) {
  const Var parts[] = {a, b};
  return concat_cols(t, std::span<const Var>(parts));
}

Var mean_rows(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  if (xv.rows() == 0) throw ContractError("mean_rows: empty operand");
  Tensor out = xv.colwise().mean();
  return t.record(Op::kMeanRows, std::move(out), {x.id}, [x](Tape& tp, Index self) {
    if (!tp.needs_grad(x.id)) return;
    Tensor& gx = tp.grad_ref(x.id);
    const double inv = 1.0 / static_cast<double>(gx.rows());
    gx.rowwise() += tp.upstream(self).row(0) * inv;
  });
}

Var scale_by_scalar(Tape& t, Var x, Var scalar) {
  const Tensor& xv = t.value(x);
  const Tensor& sv = t.value(scalar);
  if (sv.rows() != 1 || sv.cols() != 1) shape_error("scale_by_scalar", xv, sv);
  Tensor out = xv * sv(0, 0);
  return t.record(Op::kScaleByScalar, std::move(out), {x.id, scalar.id},
                  [x, scalar](Tape& tp, Index self) {
                    const Tensor& g = tp.upstream(self);
                    if (tp.needs_grad(x.id)) {
                      tp.grad_ref(x.id) += g * tp.value_at(scalar.id)(0, 0);
                    }
                    if (tp.needs_grad(scalar.id)) {
                      tp.grad_ref(scalar.id)(0, 0) += g.cwiseProduct(tp.value_at(x.id)).sum();
                    }
                  });
}

Var scale(Tape& t, Var x, double factor) {
  Tensor out = t.value(x) * factor;
  return t.record(Op::kScale, std::move(out), {x.id}, [x, factor](Tape& tp, Index self) {
    if (tp.needs_grad(x.id)) tp.grad_ref(x.id) += tp.upstream(self) * factor;
  });
}

Var relu(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  t.note_relu(xv);
  Tensor out = xv.cwiseMax(0.0);
  return t.record(Op::kRelu, std::move(out), {x.id}, [x](Tape& tp, Index self) {
    if (!tp.needs_grad(x.id)) return;
    const Tensor& g = tp.upstream(self);
    const Tensor& xin = tp.value_at(x.id);
    tp.grad_ref(x.id).array() += (xin.array() > 0.0).select(g.array(), 0.0);
  });
}

Tensor softmax(const Tensor& row) {
  Tensor out(row.rows(), row.cols());
  for (Eigen::Index r = 0; r < row.rows(); ++r) {
    const double m = row.row(r).maxCoeff();
    out.row(r) = (row.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Var softmax_row(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  if (xv.cols() == 0) throw ContractError("softmax_row: empty row");
  if (!xv.allFinite()) throw ContractError("softmax_row: non-finite input");
  Tensor out = softmax(xv);
  return t.record(Op::kSoftmaxRow, std::move(out), {x.id}, [x](Tape& tp, Index self) {
    if (!tp.needs_grad(x.id)) return;
    const Tensor& g = tp.upstream(self);
    const Tensor& y = tp.value_at(self);
    Tensor& gx = tp.grad_ref(x.id);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      gx.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

bool is_probability_row(const Tensor& p, double tol) {
  if (p.rows() != 1 || p.cols() == 0) return false;
  if (!p.allFinite() || (p.array() < 0.0).any()) return false;
  return std::abs(p.sum() - 1.0) <= tol;
}

double kl_divergence(const Tensor& target, const Tensor& model) {
  double kl = 0.0;
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    const double ps = target(0, i);
    if (ps <= 0.0) continue;
    kl += ps * (std::log(ps) - std::log(std::max(model(0, i), kLogClamp)));
  }
  return kl;
}

Var kl_div(Tape& t, const Tensor& target, Var model) {
  const Tensor& mv = t.value(model);
  if (target.rows() != mv.rows() || target.cols() != mv.cols()) {
    shape_error("kl_div", target, mv);
  }
  if (!is_probability_row(target)) throw ContractError("kl_div: target is not a probability row");
  if (!is_probability_row(mv)) throw ContractError("kl_div: model is not a probability row");
  Tensor out(1, 1);
  out(0, 0) = kl_divergence(target, mv);
  return t.record(Op::kKlDiv, std::move(out), {model.id}, [model, target](Tape& tp, Index self) {
    if (!tp.needs_grad(model.id)) return;
    const double g = tp.upstream(self)(0, 0);
    const Tensor& p = tp.value_at(model.id);
    Tensor& gp = tp.grad_ref(model.id);
    for (Eigen::Index i = 0; i < p.cols(); ++i) {
      if (target(0, i) > 0.0 && p(0, i) > kLogClamp) gp(0, i) -= g * target(0, i) / p(0, i);
    }
  });
}

Var nll(Tape& t, Var probs, Index index) {
  const Tensor& pv = t.value(probs);
  if (pv.rows() != 1 || static_cast<Eigen::Index>(index) >= pv.cols()) {
    throw ContractError("nll: index out of range");
  }
  Tensor out(1, 1);
  out(0, 0) = -std::log(std::max(pv(0, static_cast<Eigen::Index>(index)), kLogClamp));
  return t.record(Op::kNll, std::move(out), {probs.id}, [probs, index](Tape& tp, Index self) {
    if (!tp.needs_grad(probs.id)) return;
    const auto i = static_cast<Eigen::Index>(index);
    const double p = tp.value_at(probs.id)(0, i);
    if (p > kLogClamp) tp.grad_ref(probs.id)(0, i) -= tp.upstream(self)(0, 0) / p;
  });
}

Var gather_rows(Tape& t, Var x, std::span<const Index> rows) {
  const Tensor& xv = t.value(x);
  std::vector<Index> idx(rows.begin(), rows.end());
  Tensor out(static_cast<Eigen::Index>(idx.size()), xv.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= static_cast<Index>(xv.rows())) throw ContractError("gather_rows: row out of range");
    out.row(static_cast<Eigen::Index>(i)) = xv.row(static_cast<Eigen::Index>(idx[i]));
  }
  return t.record(Op::kGatherRows, std::move(out), {x.id}, [x, idx](Tape& tp, Index self) {
    if (!tp.needs_grad(x.id)) return;
    const Tensor& g = tp.upstream(self);
    Tensor& gx = tp.grad_ref(x.id);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      gx.row(static_cast<Eigen::Index>(idx[i])) += g.row(static_cast<Eigen::Index>(i));
    }
  });
}

Var segment_mean(Tape& t, Var x, std::span<const Index> src, std::span<const Index> dst,
                 Index out_rows) {
  const Tensor& xv = t.value(x);
  if (src.size() != dst.size()) throw ContractError("segment_mean: src/dst length mismatch");
  std::vector<Index> s(src.begin(), src.end());
  std::vector<Index> d(dst.begin(), dst.end());
  std::vector<double> count(out_rows, 0.0);
  for (std::size_t e = 0; e < s.size(); ++e) {
    if (s[e] >= static_cast<Index>(xv.rows()) || d[e] >= out_rows) {
      throw ContractError("segment_mean: index out of range");
    }
    count[d[e]] += 1.0;
  }
  Tensor out = Tensor::Zero(static_cast<Eigen::Index>(out_rows), xv.cols());
  for (std::size_t e = 0; e < s.size(); ++e) {
    out.row(static_cast<Eigen::Index>(d[e])) += xv.row(static_cast<Eigen::Index>(s[e]));
  }
  for (Index r = 0; r < out_rows; ++r) {
    if (count[r] > 1.0) out.row(static_cast<Eigen::Index>(r)) /= count[r];
  }
  return t.record(Op::kSegmentMean, std::move(out), {x.id},
                  [x, s, d, count](Tape& tp, Index self) {
                    if (!tp.needs_grad(x.id)) return;
                    const Tensor& g = tp.upstream(self);
                    Tensor& gx = tp.grad_ref(x.id);
                    for (std::size_t e = 0; e < s.size(); ++e) {
                      gx.row(static_cast<Eigen::Index>(s[e])) +=
                          g.row(static_cast<Eigen::Index>(d[e])) / count[d[e]];
                    }
                  });
}

Var assemble_rows(Tape& t, std::span<const Var> parts, std::span<const std::vector<Index>> rows,
                  Index out_rows) {
  if (parts.size() != rows.size()) throw ContractError("assemble_rows: parts/rows mismatch");
  if (parts.empty()) throw ContractError("assemble_rows: no operands");
  const Eigen::Index cols = t.value(parts[0]).cols();
  Tensor out = Tensor::Zero(static_cast<Eigen::Index>(out_rows), cols);
  std::vector<bool> seen(out_rows, false);
  std::vector<Index> ids;
  std::vector<std::vector<Index>> idx(rows.begin(), rows.end());
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = t.value(parts[k]);
    if (v.cols() != cols || v.rows() != static_cast<Eigen::Index>(idx[k].size())) {
      throw ContractError("assemble_rows: part " + std::to_string(k) + " has shape " +
                          shape_of(v));
    }
    for (std::size_t i = 0; i < idx[k].size(); ++i) {
      const Index r = idx[k][i];
      if (r >= out_rows || seen[r]) throw ContractError("assemble_rows: bad or repeated row");
      seen[r] = true;
      out.row(static_cast<Eigen::Index>(r)) = v.row(static_cast<Eigen::Index>(i));
    }
    ids.push_back(parts[k].id);
  }
  return t.record(Op::kAssembleRows, std::move(out), ids, [ids, idx](Tape& tp, Index self) {
    const Tensor& g = tp.upstream(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.needs_grad(ids[k])) continue;
      Tensor& gk = tp.grad_ref(ids[k]);
      for (std::size_t i = 0; i < idx[k].size(); ++i) {
        gk.row(static_cast<Eigen::Index>(i)) += g.row(static_cast<Eigen::Index>(idx[k][i]));
      }
    }
  });
}

Var transpose(Tape& t, Var x) {
  Tensor out = t.value(x).transpose();
  return t.record(Op::kTranspose, std::move(out), {x.id}, [x](Tape& tp, Index self) {
    if (tp.needs_grad(x.id)) tp.grad_ref(x.id) += tp.upstream(self).transpose();
  });
}

Var half_sum_squares(Tape& t, Var x) {
  Tensor out(1, 1);
  out(0, 0) = 0.5 * t.value(x).squaredNorm();
  return t.record(Op::kHalfSumSquares, std::move(out), {x.id}, [x](Tape& tp, Index self) {
    if (tp.needs_grad(x.id)) tp.grad_ref(x.id) += tp.upstream(self)(0, 0) * tp.value_at(x.id);
  });
}

}  // namespace kgroute::ad
