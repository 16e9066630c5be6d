#pragma once

// Central-difference verification of the router's analytic gradients.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "kgroute/autodiff.hpp"
#include "kgroute/graph.hpp"
#include "kgroute/hgnn.hpp"

namespace kgroute {

enum class CheckLoss {
  kKl,            // KL(target || p)
  kLinearScores,  // sum_a target_a * s(q, a); polynomial in every parameter
};

// Scalar type of the finite-difference evaluations.
enum class FdPrecision {
  kExtended,  // long double
  kQuad,      // binary128; slower
};

struct GradCheckOptions {
  double eps = 1e-6;
  CheckLoss loss = CheckLoss::kKl;
  FdPrecision precision = FdPrecision::kExtended;
  // Input-embedding coordinates sampled per check.
  std::size_t input_samples = 32;
  std::uint64_t seed = 1;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // Fault injection: scale the upstream gradient of this op's adjoint.
  std::optional<ad::Op> corrupt;
  double corrupt_factor = 1.5;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_location;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  // Coordinates whose +eps / -eps evaluations straddle a ReLU kink.
  std::size_t excluded_kinks = 0;
  double seconds = 0.0;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

// Analytic gradients come from the tape in double precision. Numeric ones
// are central differences of an independent tape-free evaluation of the same
// network in extended or quad precision. In double, rounding noise of the
// loss divided by 2 eps is ~1e-10, which swamps small gradient entries. Every scalar parameter and `input_samples`
// random input coordinates are checked.
GradCheckReport finite_diff_check(const GraphPlan& plan, const ad::Tensor& embeddings,
                                  const ParamStore& params, const ad::Tensor& target,
                                  const GradCheckOptions& options = {});

// A reproducible check case: random graph with `entities` entity nodes over
// `relations` domain labels, `agents` agents, random d_in-dim embeddings, a
// random target distribution and freshly initialised parameters.
struct GradCheckCase {
  RoutedGraph graph;
  ad::Tensor embeddings;
  ParamStore params;
  ad::Tensor target;
};

struct GradCheckCaseSpec {
  std::size_t nodes = 12;  // total, including query and agents
  std::size_t agents = 4;
  std::size_t relations = 3;
  std::size_t input_dim = 8;
  int hidden = 16;
  int layers = 2;
  bool linear = false;
  std::uint64_t seed = 1;
};

GradCheckCase make_gradcheck_case(const GradCheckCaseSpec& spec);

// The tape-free long double evaluation, rounded to double.
double reference_loss(const GraphPlan& plan, const ad::Tensor& embeddings, const ParamStore& params,
                      const ad::Tensor& target, CheckLoss loss = CheckLoss::kKl);

}  // namespace kgroute
