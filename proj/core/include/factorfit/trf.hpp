#pragma once

#include "factorfit/types.hpp"

#include <functional>
#include <string_view>
#include <vector>

/// Bound-constrained nonlinear least squares by a trust-region reflective
/// method: Coleman-Li scaling, a two-dimensional subspace trust-region
/// subproblem spanned by the scaled gradient and the Gauss-Newton step, and
/// reflection off the bounds to keep iterates strictly feasible.
namespace factorfit::trf {

struct LeastSquaresProblem {
  Index n_vars = 0;
  Index n_residuals = 0;
  std::function<Vector(const Vector&)> residual_fn;
  /// Optional; forward differences are used when empty.
  std::function<Matrix(const Vector&)> jacobian_fn;
  /// Bounds; +-infinity allowed. Empty means unbounded.
  Vector lower;
  Vector upper;
};

struct TrfConfig {
  int max_iterations = 50;
  double gradient_tolerance = 1e-8;
  double step_tolerance = 1e-8;
  double cost_tolerance = 1e-8;
  double initial_trust_radius = 1.0;
  /// Relative forward-difference step for the Jacobian fallback.
  double finite_difference_step = 1e-7;
};

enum class Termination { gradient, step, cost, max_iterations };

std::string_view to_string(Termination t) noexcept;

struct SolveResult {
  Vector x;
  double cost = 0.0;
  /// ||x - clip(x - g)||_inf with g the gradient at x.
  double projected_gradient_norm = 0.0;
  int iterations = 0;
  Termination termination_reason = Termination::max_iterations;
  /// Cost at x0 followed by the cost after each accepted step.
  std::vector<double> cost_history;
};

/// Throws ConfigError for invalid tolerances or bounds and EvaluationError
/// when a callback returns non-finite values.
SolveResult solve(const LeastSquaresProblem& problem, const Vector& x0, const TrfConfig& config = {});

/// Worst column-wise relative deviation between `jacobian_fn` and
/// Richardson-extrapolated central differences at a strictly feasible x.
/// Column deviation is ||J_a - J_fd||_inf / max(||J_fd||_inf, 1e-8 max(1, max|J_fd|)).
double check_jacobian(const LeastSquaresProblem& problem, const Vector& x);

/// Forward-difference Jacobian that stays inside the bounds.
Matrix finite_difference_jacobian(const LeastSquaresProblem& problem, const Vector& x,
                                  const Vector& r, double relative_step);

}  // namespace factorfit::trf
