#pragma once

// Independent reference computations shared by unit and acceptance tests.
// They use dense linear algebra or sampling and share no code with the
// factored implementations they check.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "span/sp_trajectory.hpp"

namespace span::testing {

/// V kron U for vec(W) with columns stacked.
inline Eigen::MatrixXd kron_covariance(const Eigen::MatrixXd& U, const Mat2& V) {
  const auto m = U.rows();
  Eigen::MatrixXd S(2 * m, 2 * m);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) S.block(a * m, b * m, m, m) = V(a, b) * U;
  return S;
}

/// Vectorized-normal NLL of vec(W) with covariance V kron U, via a dense LU.
inline double vec_normal_nll(const WeightMatrix& M, const Eigen::MatrixXd& U, const Mat2& V,
                             const WeightMatrix& W) {
  const auto m = M.rows();
  const Eigen::MatrixXd S = kron_covariance(U, V);
  Eigen::VectorXd r(2 * m);
  r << W.col(0) - M.col(0), W.col(1) - M.col(1);
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(S);
  const double quad = r.dot(lu.solve(r));
  return 0.5 * quad + 0.5 * static_cast<double>(2 * m) * std::log(2.0 * std::numbers::pi) +
         0.5 * std::log(lu.determinant());
}

/// Monte Carlo probability that a Gaussian point lands within r_sum of
/// `robot`, with its standard error (floored at one sample's worth).
struct McEstimate {
  double p;
  double se;
};

inline McEstimate disk_probability(const Vec2& robot, const Vec2& mean, const Mat2& cov,
                                   double r_sum, int samples, std::mt19937_64& rng) {
  const Eigen::LLT<Mat2> llt(cov);
  const Mat2 L = llt.matrixL();
  std::normal_distribution<double> normal;
  int hits = 0;
  for (int i = 0; i < samples; ++i) {
    const Vec2 o = mean + L * Vec2(normal(rng), normal(rng));
    if ((o - robot).norm() <= r_sum) ++hits;
  }
  const double p = static_cast<double>(hits) / samples;
  return {p, std::sqrt(std::max(p * (1.0 - p), 1.0 / samples) / samples)};
}

}  // namespace span::testing
