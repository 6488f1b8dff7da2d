#include "span/episode.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <map>
#include <numbers>
#include <stdexcept>

namespace span {

void EpisodeConfig::validate() const {
  if (!(goal_tolerance > 0.0)) throw std::invalid_argument("goal tolerance must be positive");
  if (!(max_time > 0.0)) throw std::invalid_argument("episode time limit must be positive");
  if (!(kappa >= 0.0)) throw std::invalid_argument("kappa must be non-negative");
  if (!std::isfinite(start.x) || !std::isfinite(start.y) || !std::isfinite(start.theta) ||
      !goal.allFinite()) {
    throw std::invalid_argument("start and goal must be finite");
  }
  bounds.validate();
  collision.validate();
  planner.validate();
}

bool true_ped_collision(const Vec2& robot, std::span<const PedestrianRecord> peds, double r_robot,
                        double r_ped) {
  const double r_sum = r_robot + r_ped;
  for (const auto& p : peds) {
    if ((p.position - robot).squaredNorm() < r_sum * r_sum) return true;
  }
  return false;
}

bool true_map_collision(const Vec2& robot, const OccupancyGrid& map, double r_robot,
                        int sweep_count) {
  for (int i = 0; i < sweep_count; ++i) {
    const double phi = 2.0 * std::numbers::pi * i / sweep_count;
    if (map.query(robot + r_robot * Vec2(std::sin(phi), std::cos(phi))) > 0.5) return true;
  }
  return false;
}

EpisodeLog run_episode(World& world, const OccupancyGrid* map, const PredictorModel* model,
                       const EpisodeConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const bool predictive = cfg.mode == PlannerMode::predictive;
  const double dt = cfg.collision.dt;
  if (predictive) {
    if (model == nullptr) throw std::invalid_argument("predictive planning needs a model");
    if (std::abs(model->dt() - dt) > 1e-9) {
      throw std::invalid_argument("model observation spacing differs from the control period");
    }
  }
  CollisionConfig collision = cfg.collision;
  if (!predictive) collision.horizon = dt;
  const BasisSpec frozen_basis =
      predictive ? model->basis() : BasisSpec::evenly_spaced(1, collision.horizon, 1.0);
  const int window = predictive ? model->observations() : 1;

  EpisodeLog log;
  log.header.planner = predictive ? "predictive" : "reactive";
  log.header.dt = dt;
  log.header.goal = cfg.goal;
  log.header.goal_tolerance = cfg.goal_tolerance;
  log.header.r_robot = cfg.collision.r_robot;
  log.header.r_ped = cfg.collision.r_ped;
  log.header.timing = cfg.record_timing;

  std::map<int, std::deque<Vec2>> history;
  RobotState state = cfg.start;
  Control previous{};
  const int max_steps = static_cast<int>(std::floor(cfg.max_time / dt + 1e-9));
  for (int step = 0;; ++step) {
    const std::vector<AgentSnapshot> agents = world.agents();
    std::map<int, std::deque<Vec2>> seen;
    for (const auto& a : agents) {
      auto& h = seen[a.id];
      if (auto it = history.find(a.id); it != history.end()) h = std::move(it->second);
      h.push_back(a.position);
      while (static_cast<int>(h.size()) > window) h.pop_front();
    }
    history = std::move(seen);

    StepRecord rec;
    rec.step = step;
    rec.robot = state;
    for (const auto& a : agents) rec.peds.push_back({a.id, a.position});
    const Vec2 pos(state.x, state.y);
    rec.ped_collision = true_ped_collision(pos, rec.peds, cfg.collision.r_robot, cfg.collision.r_ped);
    rec.map_collision = map != nullptr && true_map_collision(pos, *map, cfg.collision.r_robot,
                                                             cfg.collision.sweep_count);

    if ((pos - cfg.goal).norm() < cfg.goal_tolerance) {
      log.outcome = Outcome::success;
      log.steps.push_back(std::move(rec));
      break;
    }
    if (step >= max_steps) {
      log.outcome = Outcome::timeout;
      log.steps.push_back(std::move(rec));
      break;
    }

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<PedestrianPrediction> preds;
    preds.reserve(history.size());
    for (const auto& [id, h] : history) {
      if (predictive) {
        std::vector<Vec2> w(static_cast<std::size_t>(window - static_cast<int>(h.size())),
                            h.front());
        w.insert(w.end(), h.begin(), h.end());
        preds.push_back(predict(*model, w));
      } else {
        preds.push_back(frozen_prediction(h.back(), frozen_basis));
      }
    }
    const ControlProblem problem{state, cfg.goal, cfg.kappa, cfg.bounds,
                                 CollisionScene(preds, map, collision),
                                 predictive ? 0.0 : cfg.collision.horizon};
    const StepSolution sol = solve_step(problem, cfg.planner, previous, rng);
    const auto t1 = std::chrono::steady_clock::now();

    rec.has_control = true;
    rec.control = sol.control;
    if (cfg.record_timing) rec.iter_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    log.steps.push_back(std::move(rec));

    world.advance(state, sol.control, dt);
    state = step_dynamics(state, sol.control, dt);
    previous = sol.control;
  }
  return log;
}

}  // namespace span
