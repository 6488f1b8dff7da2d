#include "span/collision.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace span {

namespace {

// Slack added to the analytic clearance distance so that erf_inv rounding
// can never skip a pair whose bound exceeds epsilon.
constexpr double kClearanceSlack = 1e-6;

double largest_eigenvalue(const Mat2& S) {
  const double mean = 0.5 * (S(0, 0) + S(1, 1));
  const double half_diff = 0.5 * (S(0, 0) - S(1, 1));
  return mean + std::hypot(half_diff, S(0, 1));
}

double smallest_eigenvalue(const Mat2& S) {
  const double mean = 0.5 * (S(0, 0) + S(1, 1));
  const double half_diff = 0.5 * (S(0, 0) - S(1, 1));
  return std::max(0.0, mean - std::hypot(half_diff, S(0, 1)));
}

}  // namespace

void CollisionConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in (0, 1)");
  if (!(r_robot > 0.0) || !(r_ped > 0.0)) throw std::invalid_argument("radii must be positive");
  if (sweep_count < 8) throw std::invalid_argument("sweep_count must be at least 8");
  if (!(dt > 0.0) || !(dt <= horizon) || !std::isfinite(horizon)) {
    throw std::invalid_argument("need 0 < dt <= horizon");
  }
}

double erf_inv(double y) {
  if (!(y > -1.0 && y < 1.0)) {
    if (y == 1.0) return std::numeric_limits<double>::infinity();
    if (y == -1.0) return -std::numeric_limits<double>::infinity();
    return std::numeric_limits<double>::quiet_NaN();
  }
  // Closed-form starting point, then Newton on erf.
  constexpr double a = 0.147;
  const double ln = std::log(1.0 - y * y);
  const double first = 2.0 / (std::numbers::pi * a) + 0.5 * ln;
  double x = std::copysign(std::sqrt(std::sqrt(first * first - ln / a) - first), y);
  for (int i = 0; i < 6; ++i) {
    const double slope = 2.0 / std::sqrt(std::numbers::pi) * std::exp(-x * x);
    if (slope == 0.0) break;
    x -= (std::erf(x) - y) / slope;
  }
  return x;
}

double ped_collision_bound(const Vec2& robot_pos, const PointMoments& ped, double r_sum) {
  const Vec2 d = robot_pos - ped.mean;
  const double dist = d.norm();
  if (dist == 0.0) return 1.0;
  const Vec2 a = d / dist;
  const double spread = a.dot(ped.cov * a);
  const double margin = r_sum - dist;
  if (!(spread > 0.0)) {
    if (margin > 0.0) return 1.0;
    return margin < 0.0 ? 0.0 : 0.5;
  }
  const double bound = 0.5 * (1.0 + std::erf(margin / std::sqrt(2.0 * spread)));
  return std::clamp(bound, 0.0, 1.0);
}

double ped_collision_bound(const Vec2& robot_pos, const PedestrianPrediction& pred, double t,
                           const CollisionConfig& cfg) {
  return ped_collision_bound(robot_pos, pred.at(t), cfg.r_robot + cfg.r_ped);
}

bool ped_collision_check(const Vec2& robot_pos, std::span<const PedestrianPrediction> preds,
                         double t, const CollisionConfig& cfg) {
  for (const auto& pred : preds) {
    if (ped_collision_bound(robot_pos, pred, t, cfg) > cfg.epsilon) return true;
  }
  return false;
}

bool static_collision_check(const Vec2& robot_pos, const OccupancyGrid& map,
                            const CollisionConfig& cfg) {
  const double step = 2.0 * std::numbers::pi / cfg.sweep_count;
  for (int j = 0; j < cfg.sweep_count; ++j) {
    const double phi = j * step;
    const Vec2 p = robot_pos + cfg.r_robot * Vec2(std::sin(phi), std::cos(phi));
    if (map.query(p) > cfg.epsilon) return true;
  }
  return false;
}

CollisionScene::CollisionScene(std::span<const PedestrianPrediction> preds,
                               const OccupancyGrid* map, const CollisionConfig& cfg)
    : cfg_(cfg), steps_(step_count(cfg.horizon, cfg.dt)), num_peds_(preds.size()), map_(map) {
  cfg_.validate();
  const double r_sum = cfg_.r_robot + cfg_.r_ped;
  const double z = erf_inv(1.0 - 2.0 * cfg_.epsilon);
  table_.reserve(static_cast<std::size_t>(steps_) * num_peds_);
  for (int k = 0; k < steps_; ++k) {
    const double t = (k + 1) * cfg_.dt;
    for (const auto& pred : preds) {
      PointMoments m = pred.at(t);
      // The bound exceeds epsilon only when |d| < r_sum + z sqrt(2 a^T S a);
      // a^T S a lies between the eigenvalues of S.
      const double spread = z >= 0.0 ? largest_eigenvalue(m.cov) : smallest_eigenvalue(m.cov);
      const double clear = std::max(0.0, r_sum + z * std::sqrt(2.0 * spread)) + kClearanceSlack;
      table_.push_back({std::move(m), clear * clear});
    }
  }
  if (map_ != nullptr) envelope_.emplace(*map_, cfg_.r_robot);
}

bool CollisionScene::ped_collides(int step, const Vec2& robot_pos) const {
  const double r_sum = cfg_.r_robot + cfg_.r_ped;
  const auto base = static_cast<std::size_t>(step) * num_peds_;
  for (std::size_t i = 0; i < num_peds_; ++i) {
    const StepMoments& entry = table_[base + i];
    if ((robot_pos - entry.moments.mean).squaredNorm() >= entry.clear_dist_sq) continue;
    if (ped_collision_bound(robot_pos, entry.moments, r_sum) > cfg_.epsilon) return true;
  }
  return false;
}

bool CollisionScene::map_collides(const Vec2& robot_pos) const {
  if (map_ == nullptr) return false;
  if (envelope_->upper_bound(robot_pos) <= cfg_.epsilon) return false;
  return static_collision_check(robot_pos, *map_, cfg_);
}

bool CollisionScene::collides(int step, const Vec2& robot_pos) const {
  return ped_collides(step, robot_pos) || map_collides(robot_pos);
}

double CollisionScene::time_to_collision(const RobotState& x0, const Control& u) const {
  RobotState s = x0;
  for (int k = 0; k < steps_; ++k) {
    s = step_dynamics(s, u, cfg_.dt);
    if (collides(k, Vec2(s.x, s.y))) return (k + 1) * cfg_.dt;
  }
  return kNoCollision;
}

double time_to_collision(const RobotState& x0, const Control& u,
                         std::span<const PedestrianPrediction> preds, const OccupancyGrid* map,
                         const CollisionConfig& cfg) {
  cfg.validate();
  RobotState s = x0;
  const int steps = step_count(cfg.horizon, cfg.dt);
  for (int k = 0; k < steps; ++k) {
    s = step_dynamics(s, u, cfg.dt);
    const double t = (k + 1) * cfg.dt;
    const Vec2 p(s.x, s.y);
    if (ped_collision_check(p, preds, t, cfg)) return t;
    if (map != nullptr && static_collision_check(p, *map, cfg)) return t;
  }
  return kNoCollision;
}

}  // namespace span
