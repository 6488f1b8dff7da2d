#include "span/sp_trajectory.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "span/errors.hpp"

namespace span {

namespace {

constexpr double kMaxNormalCondition = 1e12;

bool is_symmetric(const Eigen::MatrixXd& A) {
  const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
  return (A - A.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * scale;
}

}  // namespace

BasisSpec BasisSpec::evenly_spaced(int m, double horizon, double gamma) {
  if (m < 1) throw std::invalid_argument("basis needs at least one function");
  if (!(horizon > 0.0)) throw std::invalid_argument("basis horizon must be positive");
  Eigen::VectorXd centers(m);
  if (m == 1) {
    centers(0) = 0.0;
  } else {
    for (int i = 0; i < m; ++i) centers(i) = horizon * i / (m - 1);
  }
  return BasisSpec(std::move(centers), gamma);
}

BasisSpec::BasisSpec(Eigen::VectorXd centers, double gamma)
    : centers_(std::move(centers)), gamma_(gamma) {
  if (centers_.size() < 1) throw std::invalid_argument("basis needs at least one center");
  if (!(gamma_ > 0.0) || !std::isfinite(gamma_)) {
    throw std::invalid_argument("basis gamma must be positive and finite");
  }
  for (Eigen::Index i = 1; i < centers_.size(); ++i) {
    if (!(centers_(i) > centers_(i - 1))) {
      throw std::invalid_argument("basis centers must be strictly increasing");
    }
  }
}

Eigen::VectorXd basis_vector(double t, const BasisSpec& basis) {
  const auto d = (basis.centers().array() - t);
  return (-basis.gamma() * d.square()).exp().matrix();
}

Vec2 evaluate(const WeightMatrix& W, const BasisSpec& basis, double t) {
  if (W.rows() != basis.size()) {
    throw DimensionError("weight rows (" + std::to_string(W.rows()) +
                         ") do not match basis size (" + std::to_string(basis.size()) + ")");
  }
  return W.transpose() * basis_vector(t, basis);
}

WeightMatrix fit_weights(std::span<const TimedPoint> points, const BasisSpec& basis,
                         double lambda) {
  if (points.empty()) throw std::invalid_argument("fit_weights needs at least one point");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw std::invalid_argument("ridge weight must be finite and non-negative");
  }
  const int m = basis.size();
  const auto n = static_cast<Eigen::Index>(points.size());

  Eigen::MatrixXd Phi(n, m);
  Eigen::MatrixX2d Y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& pt = points[static_cast<std::size_t>(i)];
    Phi.row(i) = basis_vector(pt.t, basis).transpose();
    Y.row(i) = pt.p.transpose();
  }

  Eigen::MatrixXd normal = Phi.transpose() * Phi;
  normal.diagonal().array() += lambda;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(normal, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  const bool well_conditioned = lo > 0.0 && hi / lo <= kMaxNormalCondition;

  if (well_conditioned) {
    const Eigen::LLT<Eigen::MatrixXd> llt(normal);
    if (llt.info() == Eigen::Success) {
      return llt.solve(Phi.transpose() * Y);
    }
  }

  // Rank-revealing path on the augmented least-squares system.
  Eigen::MatrixXd A(n + m, m);
  A.topRows(n) = Phi;
  A.bottomRows(m) = std::sqrt(lambda) * Eigen::MatrixXd::Identity(m, m);
  Eigen::MatrixX2d B = Eigen::MatrixX2d::Zero(n + m, 2);
  B.topRows(n) = Y;
  const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
  if (lambda == 0.0 && cod.rank() < m) {
    throw SingularSystemError("design matrix has rank " + std::to_string(cod.rank()) +
                              " < " + std::to_string(m) + " basis functions and no ridge term");
  }
  return cod.solve(B);
}

MatrixNormalParams::MatrixNormalParams(WeightMatrix M, Eigen::MatrixXd U, Mat2 V)
    : M_(std::move(M)), U_(std::move(U)), V_(V) {
  const auto m = M_.rows();
  if (m < 1 || U_.rows() != m || U_.cols() != m) {
    throw DimensionError("U must be " + std::to_string(m) + "x" + std::to_string(m));
  }
  if (!M_.allFinite() || !U_.allFinite() || !V_.allFinite()) {
    throw InvalidParamsError("matrix normal parameters must be finite");
  }
  if (!is_symmetric(U_) || !is_symmetric(V_)) {
    throw InvalidParamsError("U and V must be symmetric");
  }
  const Eigen::LLT<Eigen::MatrixXd> llt_u(U_);
  const Eigen::LLT<Mat2> llt_v(V_);
  if (llt_u.info() != Eigen::Success) throw InvalidParamsError("U is not positive definite");
  if (llt_v.info() != Eigen::Success) throw InvalidParamsError("V is not positive definite");
  L_U_ = llt_u.matrixL();
  L_V_ = llt_v.matrixL();
  if ((L_U_.diagonal().array() <= 0.0).any() || (L_V_.diagonal().array() <= 0.0).any()) {
    throw InvalidParamsError("covariance factor has a non-positive pivot");
  }
}

MatrixNormalParams MatrixNormalParams::from_cholesky(WeightMatrix M, const Eigen::MatrixXd& L_U,
                                                     const Mat2& L_V) {
  const auto m = M.rows();
  if (L_U.rows() != m || L_U.cols() != m) throw DimensionError("L_U shape mismatch");
  if (!M.allFinite() || !L_U.allFinite() || !L_V.allFinite()) {
    throw InvalidParamsError("matrix normal parameters must be finite");
  }
  if ((L_U.diagonal().array() <= 0.0).any() || (L_V.diagonal().array() <= 0.0).any()) {
    throw InvalidParamsError("Cholesky factors need positive diagonals");
  }
  MatrixNormalParams p;
  p.M_ = std::move(M);
  p.L_U_ = L_U.triangularView<Eigen::Lower>();
  p.L_V_ = L_V.triangularView<Eigen::Lower>();
  p.U_ = p.L_U_ * p.L_U_.transpose();
  p.V_ = p.L_V_ * p.L_V_.transpose();
  return p;
}

PointMoments point_moments(const MatrixNormalParams& params, const Eigen::VectorXd& phi) {
  if (phi.size() != params.rows()) throw DimensionError("basis vector length mismatch");
  // phi^T U phi = |L_U^T phi|^2 keeps the scale exactly non-negative.
  const double scale = (params.chol_U().transpose() * phi).squaredNorm();
  return {params.M().transpose() * phi, scale * params.V()};
}

PointMoments point_moments(const MatrixNormalParams& params, const BasisSpec& basis, double t) {
  return point_moments(params, basis_vector(t, basis));
}

WeightMatrix sample_weights(const MatrixNormalParams& params, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  WeightMatrix Z(params.rows(), 2);
  for (Eigen::Index j = 0; j < 2; ++j) {
    for (Eigen::Index i = 0; i < Z.rows(); ++i) Z(i, j) = normal(rng);
  }
  return params.M() + params.chol_U() * Z * params.chol_V().transpose();
}

double mn_nll(const MatrixNormalParams& params, const WeightMatrix& W) {
  if (W.rows() != params.rows()) throw DimensionError("W rows do not match parameters");
  const double m = params.rows();
  const WeightMatrix E = W - params.M();
  // B = L_U^-1 E L_V^-T, so tr[V^-1 E^T U^-1 E] = |B|_F^2.
  WeightMatrix A = params.chol_U().triangularView<Eigen::Lower>().solve(E);
  const Eigen::Matrix<double, 2, Eigen::Dynamic> Bt =
      params.chol_V().triangularView<Eigen::Lower>().solve(A.transpose());
  const double quad = 0.5 * Bt.squaredNorm();
  const double log_det_u = 2.0 * params.chol_U().diagonal().array().log().sum();
  const double log_det_v = 2.0 * params.chol_V().diagonal().array().log().sum();
  return quad + m * std::log(2.0 * std::numbers::pi) + 0.5 * m * log_det_v + log_det_u;
}

}  // namespace span
