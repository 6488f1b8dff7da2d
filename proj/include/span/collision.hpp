#pragma once

// Chance-constrained collision predicates.
//
// A pedestrian's predicted position at time t is Gaussian with mean m(t)
// and covariance S(t). The probability that a robot disk at x and the
// pedestrian disk overlap is bounded by integrating the Gaussian over the
// half-plane beyond the tangent of the combined disk along a = d / |d|,
// d = x - m(t):
//   P <= 1/2 [1 + erf((r_sum - |d|) / sqrt(2 a^T S a))]
// A collision is declared when the bound exceeds epsilon for any
// pedestrian, or when the map occupancy on a circle of the robot's radius
// exceeds epsilon.

#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "span/occupancy.hpp"
#include "span/prediction.hpp"
#include "span/unicycle.hpp"

namespace span {

struct CollisionConfig {
  double epsilon = 0.25;  ///< collision probability threshold
  double r_robot = 0.4;   ///< m
  double r_ped = 0.4;     ///< m
  int sweep_count = 36;   ///< angles sampled on the robot circle against the map
  double dt = 0.1;        ///< rollout step, s
  double horizon = 4.0;   ///< rollout length, s

  /// Throws std::invalid_argument when any field is out of range.
  void validate() const;
};

inline constexpr double kNoCollision = std::numeric_limits<double>::infinity();

/// Overlap probability bound for a robot at `robot_pos` against a Gaussian
/// position estimate. Returns 1 when the robot sits exactly on the mean.
[[nodiscard]] double ped_collision_bound(const Vec2& robot_pos, const PointMoments& ped,
                                         double r_sum);

/// Same bound with the pedestrian marginal taken from a prediction at time t.
[[nodiscard]] double ped_collision_bound(const Vec2& robot_pos, const PedestrianPrediction& pred,
                                         double t, const CollisionConfig& cfg);

/// True when any pedestrian's bound exceeds cfg.epsilon.
[[nodiscard]] bool ped_collision_check(const Vec2& robot_pos,
                                       std::span<const PedestrianPrediction> preds, double t,
                                       const CollisionConfig& cfg);

/// True when the map occupancy at any of cfg.sweep_count points evenly
/// spaced on the circle of radius r_robot around robot_pos exceeds epsilon.
[[nodiscard]] bool static_collision_check(const Vec2& robot_pos, const OccupancyGrid& map,
                                          const CollisionConfig& cfg);

/// Obstacle context for repeated collision queries within one control
/// iteration: pedestrian marginals at every rollout step and a map
/// envelope are computed once, so each rollout query only does distance
/// comparisons except near obstacles. Answers are identical to the free
/// functions above.
class CollisionScene {
 public:
  /// `map` may be null (no static obstacles). The map must outlive the scene.
  CollisionScene(std::span<const PedestrianPrediction> preds, const OccupancyGrid* map,
                 const CollisionConfig& cfg);

  /// Pedestrian or map collision at rollout step k (time (k + 1) dt).
  [[nodiscard]] bool collides(int step, const Vec2& robot_pos) const;

  [[nodiscard]] bool map_collides(const Vec2& robot_pos) const;
  [[nodiscard]] bool ped_collides(int step, const Vec2& robot_pos) const;

  /// Earliest step time in [dt, horizon] at which the constant-control
  /// Euler rollout from x0 collides; kNoCollision when none does.
  [[nodiscard]] double time_to_collision(const RobotState& x0, const Control& u) const;

  [[nodiscard]] const CollisionConfig& config() const { return cfg_; }
  [[nodiscard]] int steps() const { return steps_; }

 private:
  struct StepMoments {
    PointMoments moments;
    double clear_dist_sq;  ///< beyond this squared distance the bound is <= epsilon
  };

  CollisionConfig cfg_;
  int steps_;
  std::size_t num_peds_;
  std::vector<StepMoments> table_;  ///< step-major, num_peds_ entries per step
  const OccupancyGrid* map_;
  std::optional<OccupancyEnvelope> envelope_;
};

/// Time to collision under constant control u from x0 against the
/// pedestrians and map (null for none); kNoCollision when the horizon is
/// clear.
[[nodiscard]] double time_to_collision(const RobotState& x0, const Control& u,
                                       std::span<const PedestrianPrediction> preds,
                                       const OccupancyGrid* map, const CollisionConfig& cfg);

/// Inverse error function on (-1, 1).
[[nodiscard]] double erf_inv(double y);

}  // namespace span
