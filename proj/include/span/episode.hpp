#pragma once

// Closed-loop navigation episode: observe pedestrians, predict, solve for
// one control, apply it for one step, repeat until the goal is reached or
// time runs out.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "span/collision.hpp"
#include "span/control.hpp"
#include "span/crowd_sim.hpp"
#include "span/occupancy.hpp"
#include "span/predictor.hpp"

namespace span {

enum class PlannerMode {
  predictive,  ///< learned pedestrian predictions over the full horizon
  reactive,    ///< pedestrians frozen in place, collisions checked one step ahead
};

struct EpisodeConfig {
  RobotState start;
  Vec2 goal = Vec2::Zero();
  double goal_tolerance = 0.5;  ///< m
  double max_time = 120.0;      ///< s
  double kappa = 100.0;
  ControlBounds bounds;
  CollisionConfig collision;  ///< its dt is also the control period
  PlannerConfig planner;
  PlannerMode mode = PlannerMode::predictive;
  bool record_timing = false;  ///< wall time per iteration; off keeps logs reproducible

  void validate() const;
};

struct PedestrianRecord {
  int id;
  Vec2 position;
};

/// State at t = step * dt and the control applied from it (absent on the
/// final record). Collision flags use true geometry.
struct StepRecord {
  int step = 0;
  RobotState robot;
  bool has_control = false;
  Control control;
  bool ped_collision = false;
  bool map_collision = false;
  double iter_ms = 0.0;
  std::vector<PedestrianRecord> peds;
};

enum class Outcome { success, timeout };

struct LogHeader {
  std::uint64_t seed = 0;
  std::string scenario_hash;
  std::string planner = "predictive";
  std::string map;  ///< map file as referenced by the scenario, empty for none
  double dt = 0.1;
  Vec2 goal = Vec2::Zero();
  double goal_tolerance = 0.5;
  double r_robot = 0.4;
  double r_ped = 0.4;
  bool timing = false;
};

struct EpisodeLog {
  LogHeader header;
  Outcome outcome = Outcome::timeout;
  std::vector<StepRecord> steps;
};

/// True robot-pedestrian overlap: distance below r_robot + r_ped.
[[nodiscard]] bool true_ped_collision(const Vec2& robot, std::span<const PedestrianRecord> peds,
                                      double r_robot, double r_ped);

/// True map contact: occupancy above 0.5 at any of `sweep_count` points on
/// the robot circle.
[[nodiscard]] bool true_map_collision(const Vec2& robot, const OccupancyGrid& map, double r_robot,
                                      int sweep_count = 36);

/// Runs one episode. `model` is required in predictive mode and must use
/// the episode's dt. `map` may be null. Pedestrian windows shorter than the
/// model's observation count are padded with their earliest position.
/// Header fields other than those derived from `cfg` are left for the
/// caller.
[[nodiscard]] EpisodeLog run_episode(World& world, const OccupancyGrid* map,
                                     const PredictorModel* model, const EpisodeConfig& cfg,
                                     std::mt19937_64& rng);

}  // namespace span
