#pragma once

// Shared generators for randomized tests.

#include <Eigen/Dense>
#include <random>

namespace span::testing {

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                                     double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::MatrixXd A(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) A(i, j) = normal(rng);
  return A;
}

/// A A^T + floor I, well away from singular.
inline Eigen::MatrixXd random_spd(Eigen::Index n, std::mt19937_64& rng, double floor = 0.2) {
  const Eigen::MatrixXd A = random_matrix(n, n, rng, 1.0 / std::sqrt(static_cast<double>(n)));
  Eigen::MatrixXd S = A * A.transpose();
  S.diagonal().array() += floor;
  return 0.5 * (S + S.transpose());
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace span::testing
