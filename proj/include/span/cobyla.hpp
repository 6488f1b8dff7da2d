#pragma once

// Constrained optimization by linear approximations (COBYLA).
//
// Minimizes a black-box objective subject to inequality constraints
// c_i(x) >= 0. Objective and constraints are modeled linearly by
// interpolation over an n+1 vertex simplex; each iteration solves the
// linearized problem inside a trust region of radius rho, which shrinks
// from rho_begin to rho_end. Steps are judged with the merit function
// f(x) + mu * max(0, -c_1(x), ..., -c_m(x)), where mu grows whenever the
// linearized constraints demand it.

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace span::dfo {

struct SolverConfig {
  double rho_begin = 0.25;
  double rho_end = 1e-3;
  int max_evals = 100;
};

using Objective = std::function<double(const Eigen::VectorXd&)>;
/// Writes all constraint values into the output vector (already sized).
using Constraints = std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)>;

struct OptProblem {
  Objective objective;
  int num_constraints = 0;
  Constraints constraints;
  Eigen::VectorXd x0;

  /// lower <= x <= upper expressed as 2n one-sided constraints.
  static OptProblem box(Objective objective, const Eigen::VectorXd& lower,
                        const Eigen::VectorXd& upper, Eigen::VectorXd x0);
};

enum class Status {
  converged,         ///< rho reached rho_end
  budget_exhausted,  ///< max_evals objective calls used
  rounding_errors,   ///< simplex inverse degraded beyond repair
};

struct OptResult {
  Eigen::VectorXd x;
  double f = 0.0;
  double max_violation = 0.0;  ///< max(0, -c_i(x)) at the returned point
  bool feasible = false;
  int evals = 0;
  Status status = Status::converged;
  /// Best feasible objective after each evaluation (+inf until one exists).
  std::vector<double> best_trace;
};

/// Runs COBYLA from problem.x0 (which need not be feasible).
///
/// The returned point is the best feasible evaluated point, ties broken
/// toward the lexicographically smaller x; if no evaluated point is feasible,
/// the least infeasible one. Deterministic: no internal randomness.
/// Throws std::invalid_argument on an empty or non-finite x0, bad radii, or
/// max_evals < n + 2. Non-finite objective values are treated as +inf.
[[nodiscard]] OptResult minimize(const OptProblem& problem, const SolverConfig& cfg = {});

}  // namespace span::dfo
