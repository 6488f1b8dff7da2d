#pragma once

// Receding-horizon control problem for the unicycle.
//
// Each control iteration picks one constant control u for the whole
// horizon T by minimizing
//   |x(T) - goal| + kappa / tau(u)
// over the control box, where x(T) is the Euler rollout end point and tau
// the rollout's time to collision (the second term vanishes when the
// horizon is clear). The objective is non-smooth, so it is minimized with
// the derivative-free solver from several starting points.

#include <random>
#include <span>

#include "span/cobyla.hpp"
#include "span/collision.hpp"
#include "span/prediction.hpp"
#include "span/unicycle.hpp"

namespace span {

/// Box on (v, omega). The default allows left turns only: 0 <= omega <= 1.
struct ControlBounds {
  Control lower{-1.0, 0.0};
  Control upper{1.0, 1.0};

  /// -v_max <= v <= v_max, -omega_max <= omega <= omega_max.
  [[nodiscard]] static ControlBounds symmetric(double v_max = 1.0, double omega_max = 1.0);

  [[nodiscard]] bool contains(const Control& u) const;
  [[nodiscard]] Control clamp(const Control& u) const;

  /// Throws std::invalid_argument unless finite and lower <= upper.
  void validate() const;
};

struct ControlProblem {
  RobotState start;
  Vec2 goal = Vec2::Zero();
  double kappa = 100.0;  ///< weight on inverse time to collision
  ControlBounds bounds;
  CollisionScene scene;  ///< obstacles, collision horizon and step size
  /// Rollout length for the goal term; 0 uses the collision horizon.
  double goal_horizon = 0.0;
};

struct CostBreakdown {
  double goal_distance;      ///< |x(T) - goal|
  double time_to_collision;  ///< kNoCollision when the horizon is clear
  double total;
};

/// Cost of holding u over the horizon. Does not check the bounds.
[[nodiscard]] CostBreakdown evaluate_cost(const Control& u, const ControlProblem& problem);
[[nodiscard]] double control_cost(const Control& u, const ControlProblem& problem);

struct PlannerConfig {
  int restarts = 40;  ///< solver runs per iteration, the first from the previous control
  dfo::SolverConfig solver;

  void validate() const;
};

struct StepSolution {
  Control control;
  CostBreakdown cost;
  int evaluations = 0;  ///< cost evaluations across all restarts
};

/// Minimizes the cost in controls normalized to [-1, 1]^2. Restart 1
/// starts from `previous` (clamped into the box), the rest from uniform
/// samples drawn from rng. Each solver result is clamped into the box and
/// re-scored; the lowest cost wins, ties going to the smaller (v, omega).
[[nodiscard]] StepSolution solve_step(const ControlProblem& problem, const PlannerConfig& cfg,
                                      const Control& previous, std::mt19937_64& rng);

/// Prediction that keeps a pedestrian at `position` with negligible
/// spread, for controllers that ignore pedestrian motion.
[[nodiscard]] PedestrianPrediction frozen_prediction(const Vec2& position, const BasisSpec& basis);

}  // namespace span
