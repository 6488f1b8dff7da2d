#pragma once

// Pedestrian worlds for closed-loop episodes.
//
// SimulatedCrowd moves goal-seeking agents that anticipate each other (and
// the robot) through a time-to-collision energy E(tau) = k / tau^2 *
// exp(-tau / tau0); the force on an agent is the negative numerical gradient
// of E with respect to its position relative to the neighbor.
// ReplayCrowd plays back recorded tracks and ignores the robot.

#include <filesystem>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "span/occupancy.hpp"
#include "span/sp_trajectory.hpp"
#include "span/unicycle.hpp"

namespace span {

struct Pedestrian {
  int id = 0;
  Vec2 position = Vec2::Zero();
  Vec2 velocity = Vec2::Zero();
  Vec2 goal = Vec2::Zero();
  double radius = 0.4;           ///< m
  double preferred_speed = 1.0;  ///< m/s
};

struct CrowdParams {
  double k = 1.5;               ///< interaction energy scale
  double tau0 = 3.0;            ///< s, exponential cutoff of the energy
  double horizon = 4.0;         ///< s, neighbors colliding later are ignored
  double max_speed = 1.0;       ///< m/s, hard clamp after every step
  double relaxation = 0.5;      ///< s, goal-seeking velocity time constant
  double gradient_step = 1e-3;  ///< m, central-difference step for the force
  double max_force = 20.0;      ///< m/s^2, cap on each interaction force
  double wall_margin = 0.3;     ///< m, map look-ahead beyond the agent radius
  double wall_strength = 5.0;   ///< m/s^2 at full occupancy

  void validate() const;
};

/// Time until two disks under constant velocities first touch:
/// 0 when they already overlap, +inf when they never touch or recede.
[[nodiscard]] double time_to_contact(const Vec2& rel_pos, const Vec2& rel_vel, double r_sum);
[[nodiscard]] double pairwise_ttc(const Pedestrian& a, const Pedestrian& b);

/// k / tau^2 * exp(-tau / tau0); 0 for tau beyond the horizon or infinite.
[[nodiscard]] double interaction_energy(double tau, const CrowdParams& params);

/// One synchronous Euler step: forces from the current snapshot, then
/// velocity and position updates. `obstacles` (e.g. the robot) repel but do
/// not move. `map` may be null.
[[nodiscard]] std::vector<Pedestrian> step_crowd(std::span<const Pedestrian> peds, double dt,
                                                 const CrowdParams& params,
                                                 const OccupancyGrid* map = nullptr,
                                                 std::span<const Pedestrian> obstacles = {});

// ---------------------------------------------------------------------------
// Replay

struct ReplayTrack {
  int id = 0;
  std::vector<TimedPoint> points;  ///< strictly increasing times
};

/// Reads `t,agent_id,x,y` CSV (header required). A directory loads every
/// *.csv inside in name order; agent ids must be unique across files.
/// Throws ParseError naming the file and line.
[[nodiscard]] std::vector<ReplayTrack> load_replay_csv(const std::filesystem::path& path);

/// Linear interpolation, clamped to the end points outside the track.
[[nodiscard]] Vec2 track_position(const ReplayTrack& track, double t);

[[nodiscard]] bool track_active(const ReplayTrack& track, double t);

struct ReplayObservation {
  int id;
  std::vector<Vec2> window;  ///< oldest first, last entry at time t
};

/// Windows of `count` positions at t - (count-1) dt, ..., t for every track
/// active at t; times before a track starts repeat its first point.
[[nodiscard]] std::vector<ReplayObservation> replay_positions(std::span<const ReplayTrack> tracks,
                                                              double t, int count, double dt);

// ---------------------------------------------------------------------------
// Worlds

struct AgentSnapshot {
  int id;
  Vec2 position;
  double radius;
};

class World {
 public:
  virtual ~World() = default;
  [[nodiscard]] virtual double time() const = 0;
  /// Agents present now, ordered by id.
  [[nodiscard]] virtual std::vector<AgentSnapshot> agents() const = 0;
  /// Advances by dt; `robot` is the robot's state at the start of the step
  /// and `u` the control it applies over the step.
  virtual void advance(const RobotState& robot, const Control& u, double dt) = 0;
};

class SimulatedCrowd : public World {
 public:
  /// `map` may be null and must outlive the world.
  SimulatedCrowd(std::vector<Pedestrian> peds, CrowdParams params, const OccupancyGrid* map,
                 double robot_radius);

  [[nodiscard]] double time() const override { return time_; }
  [[nodiscard]] std::vector<AgentSnapshot> agents() const override;
  void advance(const RobotState& robot, const Control& u, double dt) override;
  [[nodiscard]] const std::vector<Pedestrian>& pedestrians() const { return peds_; }

 private:
  std::vector<Pedestrian> peds_;
  CrowdParams params_;
  const OccupancyGrid* map_;
  double robot_radius_;
  double time_ = 0.0;
};

class ReplayCrowd : public World {
 public:
  /// Episode time 0 corresponds to track time `start_time`.
  ReplayCrowd(std::vector<ReplayTrack> tracks, double start_time, double radius);

  [[nodiscard]] double time() const override { return time_; }
  [[nodiscard]] std::vector<AgentSnapshot> agents() const override;
  void advance(const RobotState& robot, const Control& u, double dt) override;
  [[nodiscard]] const std::vector<ReplayTrack>& tracks() const { return tracks_; }

 private:
  std::vector<ReplayTrack> tracks_;
  double start_time_;
  double radius_;
  double time_ = 0.0;
};

}  // namespace span
