#include "span/sp_trajectory.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "span/errors.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace span;
using span::testing::random_matrix;
using span::testing::random_spd;
using span::testing::uniform;
using span::testing::vec_normal_nll;

namespace {

MatrixNormalParams random_params(int m, std::mt19937_64& rng) {
  return MatrixNormalParams(random_matrix(m, 2, rng), random_spd(m, rng),
                            random_spd(2, rng));
}

}  // namespace

TEST_CASE("basis_vector matches direct evaluation") {
  const BasisSpec basis(Eigen::Vector3d(0.0, 2.0, 4.0), 0.01);
  const Eigen::VectorXd phi = basis_vector(0.0, basis);
  CHECK(phi(0) == doctest::Approx(1.0));
  CHECK(phi(1) == doctest::Approx(0.96079).epsilon(1e-5));
  CHECK(phi(2) == doctest::Approx(0.85214).epsilon(1e-5));
  CHECK(phi(1) == doctest::Approx(std::exp(-0.04)).epsilon(1e-15));
  CHECK(phi(2) == doctest::Approx(std::exp(-0.16)).epsilon(1e-15));

  // Exactly one at a center, and the small-gamma limit tends to one everywhere.
  CHECK(basis_vector(2.0, basis)(1) == 1.0);
  const BasisSpec flat(Eigen::Vector3d(0.0, 2.0, 4.0), 1e-14);
  CHECK((basis_vector(3.7, flat).array() > 1.0 - 1e-12).all());
}

TEST_CASE("basis_vector components are bounded and symmetric about centers") {
  std::mt19937_64 rng(11);
  const BasisSpec basis = BasisSpec::evenly_spaced(8, 4.0, 0.7);
  for (int trial = 0; trial < 200; ++trial) {
    const double t = uniform(rng, -10.0, 10.0);
    const Eigen::VectorXd phi = basis_vector(t, basis);
    CHECK((phi.array() > 0.0).all());
    CHECK((phi.array() <= 1.0).all());
    const int i = trial % 8;
    const double c = basis.centers()(i);
    const double delta = uniform(rng, 0.0, 3.0);
    CHECK(basis_vector(c + delta, basis)(i) == doctest::Approx(basis_vector(c - delta, basis)(i)));
  }
}

TEST_CASE("basis spec validation") {
  CHECK_THROWS_AS(BasisSpec::evenly_spaced(0, 4.0, 0.01), std::invalid_argument);
  CHECK_THROWS_AS(BasisSpec(Eigen::Vector2d(1.0, 1.0), 0.01), std::invalid_argument);
  CHECK_THROWS_AS(BasisSpec(Eigen::Vector2d(0.0, 1.0), 0.0), std::invalid_argument);
  const BasisSpec b = BasisSpec::evenly_spaced(5, 4.0, 0.01);
  CHECK(b.centers()(0) == 0.0);
  CHECK(b.centers()(4) == doctest::Approx(4.0));
  CHECK(b.centers()(1) == doctest::Approx(1.0));
}

TEST_CASE("evaluate") {
  const BasisSpec basis = BasisSpec::evenly_spaced(6, 4.0, 0.3);
  CHECK(evaluate(WeightMatrix::Zero(6, 2), basis, 1.3).isZero());

  const BasisSpec single(Eigen::VectorXd::Constant(1, 0.5), 0.01);
  WeightMatrix w1(1, 2);
  w1 << 2.0, 3.0;
  const Vec2 at_center = evaluate(w1, single, 0.5);
  CHECK(at_center.x() == 2.0);
  CHECK(at_center.y() == 3.0);

  CHECK_THROWS_AS((void)evaluate(WeightMatrix::Zero(5, 2), basis, 0.0), DimensionError);

  // Scalar-loop oracle.
  std::mt19937_64 rng(3);
  const WeightMatrix W = random_matrix(6, 2, rng);
  for (double t = -1.0; t <= 5.0; t += 0.25) {
    double ox = 0.0, oy = 0.0;
    for (int i = 0; i < 6; ++i) {
      const double dt = t - basis.centers()(i);
      const double phi = std::exp(-basis.gamma() * dt * dt);
      ox += W(i, 0) * phi;
      oy += W(i, 1) * phi;
    }
    const Vec2 o = evaluate(W, basis, t);
    CHECK(o.x() == doctest::Approx(ox).epsilon(1e-13));
    CHECK(o.y() == doctest::Approx(oy).epsilon(1e-13));
  }
}

TEST_CASE("fit_weights recovers generating weights without ridge") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 1 + trial % 8;
    const BasisSpec basis = BasisSpec::evenly_spaced(m, 4.0, 1.0);
    const WeightMatrix W = random_matrix(m, 2, rng);
    std::vector<TimedPoint> pts;
    const int n = 3 * m;
    for (int i = 0; i < n; ++i) {
      const double t = 4.0 * i / std::max(1, n - 1);
      pts.push_back({t, evaluate(W, basis, t)});
    }
    const WeightMatrix fit = fit_weights(pts, basis, 0.0);
    CHECK((fit - W).cwiseAbs().maxCoeff() <= 1e-6);
    // Residual on the data itself is at rounding level.
    double worst = 0.0;
    for (const auto& p : pts) worst = std::max(worst, (evaluate(fit, basis, p.t) - p.p).norm());
    CHECK(worst <= 1e-9 * std::max(1.0, W.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("fit_weights constant regression and ridge limit") {
  const BasisSpec single(Eigen::VectorXd::Constant(1, 0.0), 0.01);
  std::vector<TimedPoint> pts(5, TimedPoint{0.0, Vec2(2.0, 3.0)});
  const WeightMatrix W = fit_weights(pts, single, 0.0);
  CHECK(W(0, 0) == doctest::Approx(2.0));
  CHECK(W(0, 1) == doctest::Approx(3.0));

  const BasisSpec basis = BasisSpec::evenly_spaced(8, 4.0, 0.01);
  std::vector<TimedPoint> line;
  for (int i = 0; i <= 40; ++i) line.push_back({0.1 * i, Vec2(0.1 * i, -0.05 * i)});
  const WeightMatrix shrunk = fit_weights(line, basis, 1e12);
  CHECK(shrunk.norm() < 1e-9);
  // The default ridge path stays finite on the ill-conditioned default basis.
  CHECK(fit_weights(line, basis, 1e-4).allFinite());
  CHECK(fit_weights(line, basis, 1e-10).allFinite());
}

TEST_CASE("fit_weights error paths") {
  const BasisSpec basis = BasisSpec::evenly_spaced(3, 4.0, 1.0);
  std::vector<TimedPoint> none;
  CHECK_THROWS_AS((void)fit_weights(none, basis, 0.0), std::invalid_argument);
  std::vector<TimedPoint> one{{1.0, Vec2(1.0, 1.0)}};
  CHECK_THROWS_AS((void)fit_weights(one, basis, 0.0), SingularSystemError);
  CHECK_NOTHROW((void)fit_weights(one, basis, 1e-3));
  CHECK_THROWS_AS((void)fit_weights(one, basis, -1.0), std::invalid_argument);
}

TEST_CASE("matrix normal parameter validation") {
  WeightMatrix M = WeightMatrix::Zero(2, 2);
  Eigen::MatrixXd U = Eigen::MatrixXd::Identity(2, 2);
  CHECK_NOTHROW(MatrixNormalParams(M, U, Mat2::Identity()));
  Eigen::MatrixXd asym = U;
  asym(0, 1) = 0.5;
  CHECK_THROWS_AS(MatrixNormalParams(M, asym, Mat2::Identity()), InvalidParamsError);
  Eigen::MatrixXd indefinite = U;
  indefinite(1, 1) = -1.0;
  CHECK_THROWS_AS(MatrixNormalParams(M, indefinite, Mat2::Identity()), InvalidParamsError);
  CHECK_THROWS_AS(MatrixNormalParams(M, Eigen::MatrixXd::Identity(3, 3), Mat2::Identity()),
                  DimensionError);
}

TEST_CASE("point_moments identities") {
  const BasisSpec basis = BasisSpec::evenly_spaced(5, 4.0, 0.4);
  const MatrixNormalParams unit(WeightMatrix::Zero(5, 2), Eigen::MatrixXd::Identity(5, 5),
                                Mat2::Identity());
  for (double t : {0.0, 1.1, 3.9}) {
    const auto pm = point_moments(unit, basis, t);
    CHECK(pm.mean.isZero());
    const double phi2 = basis_vector(t, basis).squaredNorm();
    CHECK((pm.cov - phi2 * Mat2::Identity()).cwiseAbs().maxCoeff() < 1e-14);
  }

  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const auto params = random_params(5, rng);
    const double t = uniform(rng, -1.0, 5.0);
    const auto pm = point_moments(params, basis, t);
    const Eigen::VectorXd phi = basis_vector(t, basis);
    const double s = phi.dot(params.U() * phi);
    CHECK(pm.cov.trace() == doctest::Approx(s * params.V().trace()).epsilon(1e-12));
    const Eigen::SelfAdjointEigenSolver<Mat2> eig(pm.cov);
    CHECK(eig.eigenvalues().minCoeff() >= 0.0);
    CHECK((pm.mean - params.M().transpose() * phi).norm() < 1e-12);
  }
}

TEST_CASE("point_moments covariance matches sampled trajectories") {
  std::mt19937_64 rng(21);
  const BasisSpec basis = BasisSpec::evenly_spaced(4, 4.0, 0.3);
  const auto params = random_params(4, rng);
  const double t = 1.7;
  const Eigen::VectorXd phi = basis_vector(t, basis);
  constexpr int kDraws = 100000;
  Vec2 sum = Vec2::Zero();
  Mat2 sum2 = Mat2::Zero();
  for (int k = 0; k < kDraws; ++k) {
    const Vec2 o = sample_weights(params, rng).transpose() * phi;
    sum += o;
    sum2 += o * o.transpose();
  }
  const Vec2 mean = sum / kDraws;
  const Mat2 cov = (sum2 - kDraws * mean * mean.transpose()) / (kDraws - 1);
  const auto pm = point_moments(params, phi);
  CHECK((cov - pm.cov).norm() / pm.cov.norm() < 0.05);
}

TEST_CASE("sample_weights") {
  std::mt19937_64 rng(1);
  const int m = 3;
  const WeightMatrix M = random_matrix(m, 2, rng);

  SUBCASE("vanishing covariance collapses onto the mean") {
    const MatrixNormalParams tight(M, 1e-12 * Eigen::MatrixXd::Identity(m, m),
                                   1e-12 * Mat2::Identity());
    for (int k = 0; k < 100; ++k) {
      CHECK((sample_weights(tight, rng) - M).cwiseAbs().maxCoeff() < 1e-5);
    }
  }

  SUBCASE("reproducible under identical seeds") {
    const auto params = random_params(m, rng);
    std::mt19937_64 a(77), b(77);
    CHECK(sample_weights(params, a) == sample_weights(params, b));
  }

  SUBCASE("empirical moments match M and V kron U") {
    const auto params = random_params(m, rng);
    constexpr int kDraws = 100000;
    const int d = 2 * m;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd sum2 = Eigen::MatrixXd::Zero(d, d);
    for (int k = 0; k < kDraws; ++k) {
      const WeightMatrix W = sample_weights(params, rng);
      Eigen::VectorXd v(d);
      v << W.col(0), W.col(1);
      sum += v;
      sum2 += v * v.transpose();
    }
    const Eigen::VectorXd mean = sum / kDraws;
    const Eigen::MatrixXd cov = (sum2 - kDraws * mean * mean.transpose()) / (kDraws - 1);
    const Eigen::MatrixXd kron = span::testing::kron_covariance(params.U(), params.V());
    Eigen::VectorXd mvec(d);
    mvec << params.M().col(0), params.M().col(1);
    for (int i = 0; i < d; ++i) {
      const double se = std::sqrt(kron(i, i) / kDraws);
      CHECK(std::abs(mean(i) - mvec(i)) <= 3.0 * se);
    }
    CHECK((cov - kron).norm() / kron.norm() < 0.05);
  }
}

TEST_CASE("mn_nll") {
  SUBCASE("unit covariances, unit residual") {
    const MatrixNormalParams p(WeightMatrix::Zero(2, 2), Eigen::MatrixXd::Identity(2, 2),
                               Mat2::Identity());
    WeightMatrix W = WeightMatrix::Zero(2, 2);
    W(1, 0) = 0.6;
    W(0, 1) = 0.8;
    CHECK(mn_nll(p, W) == doctest::Approx(0.5 + 2.0 * std::log(2.0 * std::numbers::pi)));
  }

  SUBCASE("minimized at the mean") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 30; ++trial) {
      const int m = 1 + trial % 5;
      const auto p = random_params(m, rng);
      const double at_mean = mn_nll(p, p.M());
      const double logdet_u = std::log(p.U().determinant());
      const double logdet_v = std::log(p.V().determinant());
      CHECK(at_mean == doctest::Approx(m * std::log(2.0 * std::numbers::pi) +
                                       0.5 * m * logdet_v + logdet_u)
                           .epsilon(1e-10));
      const WeightMatrix off = p.M() + 1e-3 * random_matrix(m, 2, rng);
      CHECK(mn_nll(p, off) > at_mean);
    }
  }

  SUBCASE("equals the vectorized normal with V kron U") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 100; ++trial) {
      const int m = 1 + trial % 5;
      const auto p = random_params(m, rng);
      const WeightMatrix W = p.M() + random_matrix(m, 2, rng);
      CHECK(std::abs(mn_nll(p, W) - vec_normal_nll(p.M(), p.U(), p.V(), W)) <= 1e-9);
    }
  }
}
