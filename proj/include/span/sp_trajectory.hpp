#pragma once

// Continuous-time stochastic process over planar trajectories.
//
// A trajectory is o(t) = W^T phi(t), where phi(t) holds m squared-exponential
// basis evaluations and W is an m x 2 weight matrix (one column per axis).
// Making W matrix-normal, W ~ MN(M, U, V), turns o(t) into a Gaussian process
// whose marginal at any t is N(M^T phi, (phi^T U phi) V).

#include <Eigen/Dense>
#include <random>
#include <span>

namespace span {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using WeightMatrix = Eigen::Matrix<double, Eigen::Dynamic, 2>;

/// Squared-exponential basis: phi_i(t) = exp(-gamma (t - c_i)^2).
class BasisSpec {
 public:
  /// m centers evenly spaced over [0, horizon]. A single center sits at 0.
  static BasisSpec evenly_spaced(int m, double horizon, double gamma);

  BasisSpec(Eigen::VectorXd centers, double gamma);

  [[nodiscard]] int size() const { return static_cast<int>(centers_.size()); }
  [[nodiscard]] const Eigen::VectorXd& centers() const { return centers_; }
  [[nodiscard]] double gamma() const { return gamma_; }

 private:
  Eigen::VectorXd centers_;
  double gamma_;
};

struct TimedPoint {
  double t = 0.0;
  Vec2 p = Vec2::Zero();
};

[[nodiscard]] Eigen::VectorXd basis_vector(double t, const BasisSpec& basis);

/// W^T phi(t). Throws DimensionError when W has the wrong row count.
[[nodiscard]] Vec2 evaluate(const WeightMatrix& W, const BasisSpec& basis, double t);

/// Ridge least-squares fit of weights to timestamped points:
///   argmin_W  sum_i |p_i - W^T phi(t_i)|^2 + lambda |vec(W)|^2
///
/// Solved by Cholesky on the regularized normal equations. When the normal
/// matrix has condition number above 1e12 the augmented system
/// [Phi; sqrt(lambda) I] W = [P; 0] is solved with a complete orthogonal
/// decomposition instead. With lambda == 0 a rank-deficient design throws
/// SingularSystemError.
[[nodiscard]] WeightMatrix fit_weights(std::span<const TimedPoint> points,
                                       const BasisSpec& basis, double lambda);

/// Matrix normal distribution MN(M, U, V) over m x 2 matrices.
///
/// U (m x m) is the among-row covariance, V (2 x 2) the among-column
/// covariance; vec(W) ~ N(vec(M), V kron U). Both must be symmetric positive
/// definite. The Cholesky factors are kept alongside since every consumer
/// (sampling, likelihood, training) needs them.
class MatrixNormalParams {
 public:
  MatrixNormalParams(WeightMatrix M, Eigen::MatrixXd U, Mat2 V);

  /// Builds from lower-triangular factors with positive diagonals.
  static MatrixNormalParams from_cholesky(WeightMatrix M, const Eigen::MatrixXd& L_U,
                                          const Mat2& L_V);

  [[nodiscard]] int rows() const { return static_cast<int>(M_.rows()); }
  [[nodiscard]] const WeightMatrix& M() const { return M_; }
  [[nodiscard]] const Eigen::MatrixXd& U() const { return U_; }
  [[nodiscard]] const Mat2& V() const { return V_; }
  [[nodiscard]] const Eigen::MatrixXd& chol_U() const { return L_U_; }
  [[nodiscard]] const Mat2& chol_V() const { return L_V_; }

 private:
  MatrixNormalParams() = default;

  WeightMatrix M_;
  Eigen::MatrixXd U_;
  Mat2 V_;
  Eigen::MatrixXd L_U_;
  Mat2 L_V_;
};

struct PointMoments {
  Vec2 mean;
  Mat2 cov;
};

/// Gaussian marginal of o(t): mean M^T phi(t), covariance (phi^T U phi) V.
[[nodiscard]] PointMoments point_moments(const MatrixNormalParams& params,
                                         const BasisSpec& basis, double t);

/// Same as point_moments with phi(t) already evaluated.
[[nodiscard]] PointMoments point_moments(const MatrixNormalParams& params,
                                         const Eigen::VectorXd& phi);

/// Draws W = M + L_U Z L_V^T with Z standard normal.
[[nodiscard]] WeightMatrix sample_weights(const MatrixNormalParams& params,
                                          std::mt19937_64& rng);

/// Matrix-normal negative log-density of W:
///   1/2 tr[V^-1 (W-M)^T U^-1 (W-M)] + m ln(2 pi) + (m/2) ln|V| + ln|U|
[[nodiscard]] double mn_nll(const MatrixNormalParams& params, const WeightMatrix& W);

}  // namespace span
