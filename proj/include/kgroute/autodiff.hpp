#pragma once

// Dense row-major kernels with a reverse-mode tape. Every primitive records
// its output value plus an adjoint closure; backward() replays the closures
// in reverse order exactly once.

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace kgroute::ad {

using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = std::size_t;

// Clamp applied to model probabilities before taking logs.
inline constexpr double kLogClamp = 1e-12;

// Handle to a value recorded on a Tape.
struct Var {
  static constexpr Index kNone = std::numeric_limits<Index>::max();
  Index id = kNone;

  bool valid() const noexcept { return id != kNone; }
  friend bool operator==(Var, Var) = default;
};

enum class Op {
  kLeaf,
  kMatmul,
  kAddBias,
  kAdd,
  kConcatCols,
  kMeanRows,
  kScaleByScalar,
  kScale,
  kRelu,
  kSoftmaxRow,
  kKlDiv,
  kNll,
  kGatherRows,
  kSegmentMean,
  kAssembleRows,
  kTranspose,
  kHalfSumSquares,
};

std::string to_string(Op op);

// Fault injection for the gradient checker's mutation test: the adjoint of
// `corrupt` receives its upstream gradient scaled by `factor`.
struct TapeOptions {
  std::optional<Op> corrupt;
  double factor = 1.5;
  // Record ReLU activation patterns (see Tape::relu_pattern).
  bool track_relu = false;
};

class Tape {
 public:
  using Adjoint = std::function<void(Tape&, Index self)>;

  explicit Tape(TapeOptions options = {}) : options_(options) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Owned leaf. Differentiable leaves get a gradient after backward().
  Var input(Tensor value, bool requires_grad);
  // Borrowed differentiable leaf; `value` must outlive the tape.
  Var parameter(const Tensor& value);
  Var constant(Tensor value) { return input(std::move(value), false); }

  const Tensor& value(Var v) const;
  Op op(Var v) const;
  bool requires_grad(Var v) const;
  Index size() const noexcept { return nodes_.size(); }

  // Runs the recorded adjoints from `loss` (a 1x1 value) back to the leaves.
  void backward(Var loss);
  bool backward_done() const noexcept { return backward_done_; }

  // Gradient of the loss w.r.t. a differentiable leaf (zeros if no path).
  // Throws ContractError for unknown ids, non-leaves, or non-differentiable
  // leaves, and if backward() has not run.
  const Tensor& grad(Var leaf) const;
  // Gradient at any recorded node that requires grad (intermediate states
  // included); zeros if no path.
  const Tensor& grad_at(Var v) const;

  // Concatenated ReLU activation pattern of this tape, one flag per recorded
  // pre-activation entry (> 0). Used to detect kink crossings in finite
  // differences.
  const std::vector<bool>& relu_pattern() const noexcept { return relu_pattern_; }

  // --- recording interface used by the primitives below ---
  Var record(Op op, Tensor value, std::vector<Index> inputs, Adjoint adjoint);
  bool needs_grad(Index id) const { return nodes_[id].requires_grad; }
  const Tensor& value_at(Index id) const;
  const Tensor& upstream(Index id) const { return nodes_[id].grad; }
  // Gradient accumulator for `id`, zero-initialised on first touch.
  Tensor& grad_ref(Index id);
  void note_relu(const Tensor& pre);

 private:
  struct Node {
    Op op = Op::kLeaf;
    Tensor value;
    const Tensor* borrowed = nullptr;
    Tensor grad;
    bool requires_grad = false;
    bool touched = false;
    std::vector<Index> inputs;
    Adjoint adjoint;
  };

  void check_var(Var v) const;

  TapeOptions options_;
  std::vector<Node> nodes_;
  std::vector<bool> relu_pattern_;
  bool backward_done_ = false;
  mutable std::deque<Tensor> zero_cache_;
};

// ---------------------------------------------------------------------------
// Primitives. Shapes are validated at op time (ContractError on mismatch).

Var matmul(Tape& t, Var a, Var b);
// x (R x C) plus a 1 x C row broadcast over rows.
Var add_bias(Tape& t, Var x, Var bias);
Var add(Tape& t, Var a, Var b);
Var concat_cols(Tape& t, std::span<const Var> parts);
Var concat_cols(Tape& t, Var a, Var b);
// Column-wise mean over rows: R x C -> 1 x C.
Var mean_rows(Tape& t, Var x);
// x scaled by a 1x1 (differentiable) scalar.
Var scale_by_scalar(Tape& t, Var x, Var scalar);
Var scale(Tape& t, Var x, double factor);
// max(0, x); the subgradient at 0 is 0.
Var relu(Tape& t, Var x);
// Row-wise softmax with max-subtraction.
Var softmax_row(Tape& t, Var x);
// KL(target || model) for 1 x n probability rows; target is a constant.
Var kl_div(Tape& t, const Tensor& target, Var model);
// -log(max(p[index], kLogClamp)) for a 1 x n probability row.
Var nll(Tape& t, Var probs, Index index);
// out[i] = x[rows[i]]; repeated rows allowed.
Var gather_rows(Tape& t, Var x, std::span<const Index> rows);
// out[dst[e]] = mean over edges e of x[src[e]]; rows with no incoming edge
// are zero. Output has `out_rows` rows.
Var segment_mean(Tape& t, Var x, std::span<const Index> src, std::span<const Index> dst,
                 Index out_rows);
// Places parts[k] row i at output row rows[k][i]; unassigned rows are zero.
Var assemble_rows(Tape& t, std::span<const Var> parts, std::span<const std::vector<Index>> rows,
                  Index out_rows);
Var transpose(Tape& t, Var x);
// 0.5 * sum of squared entries -> 1x1.
Var half_sum_squares(Tape& t, Var x);

// Plain helpers (not recorded).
Tensor softmax(const Tensor& row);
double kl_divergence(const Tensor& target, const Tensor& model);
bool is_probability_row(const Tensor& p, double tol = 1e-8);

}  // namespace kgroute::ad
