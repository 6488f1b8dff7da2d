#pragma once

#include "span/sp_trajectory.hpp"

namespace span {

/// Predicted future of one pedestrian: a distribution over weights in a
/// frame translated by `anchor` (the world position of the frame origin).
/// Time 0 is the pedestrian's last observation.
struct PedestrianPrediction {
  MatrixNormalParams params;
  BasisSpec basis;
  Vec2 anchor = Vec2::Zero();

  /// World-frame Gaussian marginal at time t.
  [[nodiscard]] PointMoments at(double t) const {
    PointMoments m = point_moments(params, basis, t);
    m.mean += anchor;
    return m;
  }
};

}  // namespace span
