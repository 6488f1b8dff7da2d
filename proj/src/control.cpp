#include "span/control.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace span {

ControlBounds ControlBounds::symmetric(double v_max, double omega_max) {
  ControlBounds b{{-v_max, -omega_max}, {v_max, omega_max}};
  b.validate();
  return b;
}

bool ControlBounds::contains(const Control& u) const {
  return u.v >= lower.v && u.v <= upper.v && u.omega >= lower.omega && u.omega <= upper.omega;
}

Control ControlBounds::clamp(const Control& u) const {
  return {std::clamp(u.v, lower.v, upper.v), std::clamp(u.omega, lower.omega, upper.omega)};
}

void ControlBounds::validate() const {
  const bool finite = std::isfinite(lower.v) && std::isfinite(upper.v) &&
                      std::isfinite(lower.omega) && std::isfinite(upper.omega);
  if (!finite || lower.v > upper.v || lower.omega > upper.omega) {
    throw std::invalid_argument("control bounds must be finite with lower <= upper");
  }
}

void PlannerConfig::validate() const {
  if (restarts < 1) throw std::invalid_argument("planner needs at least one restart");
  if (!(solver.rho_end > 0.0) || solver.rho_end > solver.rho_begin) {
    throw std::invalid_argument("solver radii must satisfy 0 < rho_end <= rho_begin");
  }
  if (solver.max_evals < 4) throw std::invalid_argument("solver budget must be at least 4");
}

CostBreakdown evaluate_cost(const Control& u, const ControlProblem& problem) {
  const CollisionConfig& cfg = problem.scene.config();
  const int checked = problem.scene.steps();
  const int steps =
      problem.goal_horizon > 0.0 ? step_count(problem.goal_horizon, cfg.dt) : checked;
  double tau = kNoCollision;
  RobotState s = problem.start;
  for (int k = 0; k < steps; ++k) {
    s = step_dynamics(s, u, cfg.dt);
    if (k < checked && tau == kNoCollision && problem.scene.collides(k, Vec2(s.x, s.y))) {
      tau = (k + 1) * cfg.dt;
    }
  }
  const double dist = (Vec2(s.x, s.y) - problem.goal).norm();
  const double penalty = tau == kNoCollision ? 0.0 : problem.kappa / tau;
  return {dist, tau, dist + penalty};
}

double control_cost(const Control& u, const ControlProblem& problem) {
  return evaluate_cost(u, problem).total;
}

namespace {

/// Affine map between the control box and [-1, 1]^2.
struct Normalizer {
  ControlBounds box;

  [[nodiscard]] Control to_control(const Eigen::VectorXd& s) const {
    const double a = std::clamp(s(0), -1.0, 1.0);
    const double b = std::clamp(s(1), -1.0, 1.0);
    return {box.lower.v + 0.5 * (a + 1.0) * (box.upper.v - box.lower.v),
            box.lower.omega + 0.5 * (b + 1.0) * (box.upper.omega - box.lower.omega)};
  }

  [[nodiscard]] Eigen::VectorXd to_unit(const Control& u) const {
    auto unit = [](double x, double lo, double hi) {
      return hi > lo ? 2.0 * (x - lo) / (hi - lo) - 1.0 : 0.0;
    };
    const Control c = box.clamp(u);
    return Eigen::Vector2d(unit(c.v, box.lower.v, box.upper.v),
                           unit(c.omega, box.lower.omega, box.upper.omega));
  }
};

bool better(const StepSolution& a, const StepSolution& b) {
  return std::tie(a.cost.total, a.control.v, a.control.omega) <
         std::tie(b.cost.total, b.control.v, b.control.omega);
}

}  // namespace

StepSolution solve_step(const ControlProblem& problem, const PlannerConfig& cfg,
                        const Control& previous, std::mt19937_64& rng) {
  problem.bounds.validate();
  cfg.validate();
  const Normalizer norm{problem.bounds};

  // Draw every start before solving so the random stream does not depend
  // on solver behavior.
  std::vector<Eigen::VectorXd> starts{norm.to_unit(previous)};
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int r = 1; r < cfg.restarts; ++r) {
    const double a = unit(rng);
    const double b = unit(rng);
    starts.emplace_back(Eigen::Vector2d(a, b));
  }

  int evals = 0;
  const dfo::Objective objective = [&](const Eigen::VectorXd& s) {
    ++evals;
    return control_cost(norm.to_control(s), problem);
  };
  const Eigen::VectorXd lo = Eigen::Vector2d::Constant(-1.0);
  const Eigen::VectorXd hi = Eigen::Vector2d::Constant(1.0);

  StepSolution best;
  bool have_best = false;
  for (const auto& x0 : starts) {
    const dfo::OptResult res = dfo::minimize(dfo::OptProblem::box(objective, lo, hi, x0), cfg.solver);
    StepSolution cand;
    cand.control = norm.to_control(res.x);
    cand.cost = evaluate_cost(cand.control, problem);
    if (!have_best || better(cand, best)) {
      best = cand;
      have_best = true;
    }
  }
  best.evaluations = evals;
  return best;
}

PedestrianPrediction frozen_prediction(const Vec2& position, const BasisSpec& basis) {
  const int m = basis.size();
  // Marginal variance (phi^T U phi) V stays below 1e-12 m^2 for any t.
  const double spread = 1e-6 / std::sqrt(static_cast<double>(m));
  return {MatrixNormalParams::from_cholesky(WeightMatrix::Zero(m, 2),
                                            spread * Eigen::MatrixXd::Identity(m, m),
                                            Mat2::Identity()),
          basis, position};
}

}  // namespace span
