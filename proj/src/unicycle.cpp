#include "span/unicycle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace span {

double wrap_angle(double theta) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(theta + std::numbers::pi, two_pi);
  if (w < 0.0) w += two_pi;
  w -= std::numbers::pi;
  // fmod can land exactly on the excluded upper end after the shift.
  if (w >= std::numbers::pi) w -= two_pi;
  return w;
}

RobotState step_dynamics(const RobotState& s, const Control& u, double dt) {
  return {s.x + u.v * std::cos(s.theta) * dt, s.y + u.v * std::sin(s.theta) * dt,
          wrap_angle(s.theta + u.omega * dt)};
}

int step_count(double horizon, double dt) { return static_cast<int>(std::lround(horizon / dt)); }

std::vector<RobotState> rollout(const RobotState& s0, const Control& u, double horizon,
                                double dt) {
  const int steps = step_count(horizon, dt);
  std::vector<RobotState> out;
  out.reserve(static_cast<std::size_t>(std::max(steps, 0)));
  RobotState s = s0;
  for (int k = 0; k < steps; ++k) {
    s = step_dynamics(s, u, dt);
    out.push_back(s);
  }
  return out;
}

}  // namespace span
