#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "span/cobyla.hpp"

using span::dfo::minimize;
using span::dfo::OptProblem;
using span::dfo::SolverConfig;
using span::dfo::Status;

namespace {

Eigen::Vector2d v2(double x, double y) { return Eigen::Vector2d(x, y); }

double shifted_bowl(const Eigen::VectorXd& x) {
  return std::pow(x(0) - 0.3, 2) + std::pow(x(1) + 0.2, 2);
}

double kink(const Eigen::VectorXd& x) { return std::abs(x(0) - 0.5) + std::abs(x(1)); }

// Exhaustive minimum over a regular grid covering [lo, hi]^2.
Eigen::Vector2d grid_argmin(double (*f)(const Eigen::VectorXd&), double lo, double hi,
                            double step) {
  Eigen::VectorXd best = v2(lo, lo);
  double best_f = std::numeric_limits<double>::infinity();
  const int count = static_cast<int>(std::lround((hi - lo) / step));
  Eigen::VectorXd x(2);
  for (int i = 0; i <= count; ++i) {
    for (int j = 0; j <= count; ++j) {
      x << lo + i * step, lo + j * step;
      const double v = f(x);
      if (v < best_f) {
        best_f = v;
        best = x;
      }
    }
  }
  return best;
}

}  // namespace

TEST_CASE("interior optimum of a shifted bowl") {
  const auto p = OptProblem::box(shifted_bowl, v2(-1, -1), v2(1, 1), v2(0, 0));
  const auto r = minimize(p);
  CHECK(r.feasible);
  CHECK(std::abs(r.x(0) - 0.3) <= 1e-3);
  CHECK(std::abs(r.x(1) + 0.2) <= 1e-3);
  CHECK(r.evals <= SolverConfig{}.max_evals);
}

TEST_CASE("optimum projected onto an active bound") {
  const auto p = OptProblem::box(shifted_bowl, v2(-1, 0), v2(1, 1), v2(0, 0.5));
  const auto r = minimize(p);
  CHECK(r.feasible);
  CHECK(std::abs(r.x(0) - 0.3) <= 1e-3);
  CHECK(std::abs(r.x(1) - 0.0) <= 1e-3);
}

TEST_CASE("non-smooth objective agrees with a grid search") {
  const Eigen::Vector2d oracle = grid_argmin(kink, -1.0, 1.0, 1e-3);
  const auto p = OptProblem::box(kink, v2(-1, -1), v2(1, 1), v2(-0.5, 0.5));
  const auto r = minimize(p);
  CHECK(r.feasible);
  CHECK((r.x - oracle).norm() <= 1e-2);
}

TEST_CASE("infeasible start is pulled into the box") {
  const auto p = OptProblem::box(shifted_bowl, v2(-1, -1), v2(1, 1), v2(3, -4));
  const auto r = minimize(p, {0.25, 1e-3, 200});
  CHECK(r.feasible);
  CHECK((r.x - v2(0.3, -0.2)).norm() <= 1e-2);
}

TEST_CASE("random strictly convex quadratics match the projected optimum") {
  const SolverConfig cfg;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  int failures = 0;
  for (int trial = 0; trial < 100; ++trial) {
    // Axis-aligned curvature keeps the box-constrained optimum a simple
    // projection of the unconstrained one.
    const Eigen::Vector2d center(1.6 * unit(rng), 1.6 * unit(rng));
    const Eigen::Vector2d curvature(1.0 + 2.0 * (unit(rng) + 1.0), 1.0 + 2.0 * (unit(rng) + 1.0));
    auto f = [center, curvature](const Eigen::VectorXd& x) {
      return curvature.dot((x - center).cwiseAbs2());
    };
    const Eigen::Vector2d start(unit(rng), unit(rng));
    const auto r = minimize(OptProblem::box(f, v2(-1, -1), v2(1, 1), start), cfg);
    const Eigen::Vector2d expected = center.cwiseMax(-1.0).cwiseMin(1.0);
    if (!r.feasible || (r.x - expected).cwiseAbs().maxCoeff() > 10 * cfg.rho_end) ++failures;
  }
  CHECK(failures == 0);
}

TEST_CASE("returned point lies in the box within rho_end") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unit(-2.0, 2.0);
  const SolverConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Vector3d a(unit(rng), unit(rng), unit(rng));
    auto f = [a](const Eigen::VectorXd& x) {
      return std::sin(3 * x(0)) + a.dot(x) + std::abs(x(1) - x(2));
    };
    const Eigen::Vector3d lo = -Eigen::Vector3d::Ones();
    const Eigen::Vector3d hi = Eigen::Vector3d::Ones();
    const auto r = minimize(OptProblem::box(f, lo, hi, Eigen::Vector3d(unit(rng), 0, 0)), cfg);
    CHECK((r.x.array() >= lo.array() - cfg.rho_end).all());
    CHECK((r.x.array() <= hi.array() + cfg.rho_end).all());
  }
}

TEST_CASE("best feasible objective never increases") {
  const auto p = OptProblem::box(kink, v2(-1, -1), v2(1, 1), v2(-0.5, 0.5));
  const auto r = minimize(p);
  REQUIRE(static_cast<int>(r.best_trace.size()) == r.evals);
  for (std::size_t i = 1; i < r.best_trace.size(); ++i) {
    CHECK(r.best_trace[i] <= r.best_trace[i - 1]);
  }
  CHECK(r.best_trace.back() == r.f);
}

TEST_CASE("identical inputs give identical outputs") {
  auto f = [](const Eigen::VectorXd& x) { return std::cos(5 * x(0)) * x(1) + x.squaredNorm(); };
  const auto p = OptProblem::box(f, v2(-1, -1), v2(1, 1), v2(0.2, -0.7));
  const auto a = minimize(p);
  const auto b = minimize(p);
  CHECK(a.x == b.x);
  CHECK(a.f == b.f);
  CHECK(a.evals == b.evals);
  CHECK(a.best_trace == b.best_trace);
}

TEST_CASE("budget exhaustion returns the best point with a flag") {
  const auto p = OptProblem::box(shifted_bowl, v2(-1, -1), v2(1, 1), v2(-0.9, 0.9));
  const auto r = minimize(p, {0.25, 1e-6, 6});
  CHECK(r.status == Status::budget_exhausted);
  CHECK(r.evals == 6);
  CHECK(r.feasible);
  CHECK(r.f == doctest::Approx(shifted_bowl(r.x)));
}

TEST_CASE("ties resolve toward the lexicographically smaller point") {
  // Flat objective: every evaluated point ties, so the smallest one wins.
  auto flat = [](const Eigen::VectorXd&) { return 1.0; };
  const auto r = minimize(OptProblem::box(flat, v2(-1, -1), v2(1, 1), v2(0, 0)));
  CHECK(r.feasible);
  CHECK(r.x(0) <= 0.0);
}

TEST_CASE("non-finite objective values do not raise") {
  auto f = [](const Eigen::VectorXd& x) {
    return x(0) > 0.5 ? std::numeric_limits<double>::quiet_NaN() : std::pow(x(0) - 0.4, 2) + x(1) * x(1);
  };
  const auto r = minimize(OptProblem::box(f, v2(-1, -1), v2(1, 1), v2(0, 0)));
  CHECK(std::isfinite(r.f));
  CHECK(r.x(0) <= 0.5);
}

TEST_CASE("unconstrained problem") {
  OptProblem p;
  p.objective = [](const Eigen::VectorXd& x) { return std::pow(x(0) - 2.0, 2); };
  p.x0 = Eigen::VectorXd::Zero(1);
  const auto r = minimize(p, {0.5, 1e-4, 200});
  CHECK(r.x(0) == doctest::Approx(2.0).epsilon(1e-3));
}

TEST_CASE("argument validation") {
  const auto good = OptProblem::box(shifted_bowl, v2(-1, -1), v2(1, 1), v2(0, 0));
  CHECK_THROWS_AS((void)minimize(good, {0.1, 0.2, 100}), std::invalid_argument);
  CHECK_THROWS_AS((void)minimize(good, {0.1, 0.0, 100}), std::invalid_argument);
  CHECK_THROWS_AS((void)minimize(good, {0.25, 1e-3, 3}), std::invalid_argument);
  auto empty = good;
  empty.x0 = Eigen::VectorXd();
  CHECK_THROWS_AS((void)minimize(empty), std::invalid_argument);
  auto nan_start = good;
  nan_start.x0(0) = std::nan("");
  CHECK_THROWS_AS((void)minimize(nan_start), std::invalid_argument);
  CHECK_THROWS_AS(OptProblem::box(shifted_bowl, v2(1, -1), v2(-1, 1), v2(0, 0)),
                  std::invalid_argument);
}
