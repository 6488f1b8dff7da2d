#pragma once

// Velocity-controlled unicycle and its constant-control Euler rollout.

#include <vector>

namespace span {

struct RobotState {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;  ///< radians, kept in [-pi, pi)
};

struct Control {
  double v = 0.0;      ///< forward speed, m/s
  double omega = 0.0;  ///< turn rate, rad/s
};

/// Maps any finite angle into [-pi, pi).
[[nodiscard]] double wrap_angle(double theta);

/// One explicit Euler step: position moves along the current heading, then
/// the heading turns by omega * dt and is wrapped.
[[nodiscard]] RobotState step_dynamics(const RobotState& s, const Control& u, double dt);

/// round(horizon / dt) Euler steps under constant u. The start state is not
/// included; element k is the state at time (k + 1) dt.
[[nodiscard]] std::vector<RobotState> rollout(const RobotState& s0, const Control& u,
                                              double horizon, double dt);

/// round(horizon / dt), the number of Euler steps covering the horizon.
[[nodiscard]] int step_count(double horizon, double dt);

}  // namespace span
