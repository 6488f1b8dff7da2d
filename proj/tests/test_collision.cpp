#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "doctest.h"
#include "span/collision.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using span::CollisionConfig;
using span::CollisionScene;
using span::kNoCollision;
using span::Mat2;
using span::OccupancyGrid;
using span::PedestrianPrediction;
using span::PointMoments;
using span::Vec2;
using span::testing::random_spd;
using span::testing::uniform;

namespace {

const span::BasisSpec kBasis = span::BasisSpec::evenly_spaced(8, 4.0, 0.01);

// Pedestrian standing still at `pos` with covariance scale `u_scale`.
PedestrianPrediction standing(const Vec2& pos, double u_scale = 1e-9) {
  const int m = kBasis.size();
  return {span::MatrixNormalParams(span::WeightMatrix::Zero(m, 2),
                                   u_scale * Eigen::MatrixXd::Identity(m, m), Mat2::Identity()),
          kBasis, pos};
}

// Pedestrian walking with constant velocity from `start`; the mean is
// fitted to the straight line so it is only approximately linear.
PedestrianPrediction walking(const Vec2& start, const Vec2& vel, double u_scale,
                             std::mt19937_64& rng) {
  std::vector<span::TimedPoint> pts;
  for (int i = 0; i <= 40; ++i) pts.push_back({0.1 * i, vel * (0.1 * i)});
  const auto W = span::fit_weights(pts, kBasis, 1e-6);
  const int m = kBasis.size();
  Eigen::MatrixXd U = u_scale * random_spd(m, rng);
  return {span::MatrixNormalParams(W, U, random_spd(2, rng)), kBasis, start};
}

span::testing::McEstimate disk_probability(const Vec2& robot, const PointMoments& ped,
                                           double r_sum, int samples, std::mt19937_64& rng) {
  return span::testing::disk_probability(robot, ped.mean, ped.cov, r_sum, samples, rng);
}

double normal_quantile(double p) { return std::sqrt(2.0) * span::erf_inv(2.0 * p - 1.0); }

}  // namespace

TEST_CASE("erf_inv inverts erf") {
  for (double y : {-0.999999, -0.9, -0.5, -1e-8, 0.0, 0.3, 0.5, 0.95, 0.9999999}) {
    CHECK(std::erf(span::erf_inv(y)) == doctest::Approx(y).epsilon(1e-13));
  }
  CHECK(span::erf_inv(0.5) == doctest::Approx(0.4769362762044699));
  CHECK(std::isinf(span::erf_inv(1.0)));
  CHECK(std::isnan(span::erf_inv(1.5)));
}

TEST_CASE("bound is one half when the distance equals the combined radius") {
  const PointMoments ped{Vec2(1.0, 2.0), Mat2::Identity() * 0.3};
  CHECK(span::ped_collision_bound(Vec2(1.0, 2.8), ped, 0.8) == doctest::Approx(0.5));
  CHECK(span::ped_collision_bound(Vec2(1.8, 2.0), ped, 0.8) == doctest::Approx(0.5));
}

TEST_CASE("bound vanishes far away and is one at the mean") {
  const PointMoments ped{Vec2::Zero(), Mat2::Identity() * 0.1};
  CHECK(span::ped_collision_bound(Vec2(1e3, 0.0), ped, 0.8) < 1e-12);
  CHECK(span::ped_collision_bound(Vec2::Zero(), ped, 0.8) == 1.0);
}

TEST_CASE("bound handles a degenerate spread along the offset") {
  const PointMoments ped{Vec2::Zero(), Mat2::Zero()};
  CHECK(span::ped_collision_bound(Vec2(0.5, 0.0), ped, 0.8) == 1.0);
  CHECK(span::ped_collision_bound(Vec2(0.9, 0.0), ped, 0.8) == 0.0);
  CHECK(span::ped_collision_bound(Vec2(0.8, 0.0), ped, 0.8) == 0.5);
}

TEST_CASE("bound upper-bounds the Monte Carlo disk probability") {
  std::mt19937_64 rng(21);
  int violations = 0;
  for (int trial = 0; trial < 150; ++trial) {
    const double r_sum = uniform(rng, 0.2, 1.5);
    const Mat2 cov = random_spd(2, rng, 0.01) * uniform(rng, 0.05, 2.0);
    const Vec2 mean(uniform(rng, -2, 2), uniform(rng, -2, 2));
    const Vec2 robot = mean + Vec2(uniform(rng, -3, 3), uniform(rng, -3, 3));
    const PointMoments ped{mean, cov};
    const auto mc = disk_probability(robot, ped, r_sum, 20000, rng);
    if (mc.p > span::ped_collision_bound(robot, ped, r_sum) + 3.0 * mc.se) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("bound is nonincreasing in distance for isotropic covariance") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    const PointMoments ped{Vec2::Zero(), Mat2::Identity() * uniform(rng, 0.01, 1.0)};
    const double r_sum = uniform(rng, 0.2, 1.2);
    const Vec2 dir = Vec2(uniform(rng, -1, 1), uniform(rng, -1, 1)).normalized();
    double prev = 1.0;
    for (double d = 0.01; d < 5.0; d += 0.01) {
      const double b = span::ped_collision_bound(dir * d, ped, r_sum);
      CHECK(b <= prev);
      prev = b;
    }
  }
}

TEST_CASE("isotropic check is invariant under joint rescaling") {
  std::mt19937_64 rng(23);
  CollisionConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    const double s = uniform(rng, 0.2, 5.0);
    const double var = uniform(rng, 0.01, 0.5);
    const Vec2 d(uniform(rng, -2, 2), uniform(rng, -2, 2));
    const double r_sum = uniform(rng, 0.3, 1.0);
    const PointMoments ped{Vec2::Zero(), Mat2::Identity() * var};
    const PointMoments scaled{Vec2::Zero(), Mat2::Identity() * var * s * s};
    const double b1 = span::ped_collision_bound(d, ped, r_sum);
    const double b2 = span::ped_collision_bound(d * s, scaled, r_sum * s);
    CHECK(b1 == doctest::Approx(b2).epsilon(1e-9));
    if (std::abs(b1 - cfg.epsilon) > 1e-9) CHECK((b1 > cfg.epsilon) == (b2 > cfg.epsilon));
  }
}

TEST_CASE("pedestrian check takes the maximum over pedestrians") {
  CollisionConfig cfg;
  CHECK_FALSE(span::ped_collision_check(Vec2::Zero(), {}, 1.0, cfg));

  // A deterministic pedestrian exactly r_sum away gives bound 0.5.
  const std::vector<PedestrianPrediction> touching{standing(Vec2(0.8, 0.0))};
  CHECK(span::ped_collision_bound(Vec2::Zero(), touching[0], 1.0, cfg) == doctest::Approx(0.5));
  CHECK(span::ped_collision_check(Vec2::Zero(), touching, 1.0, cfg));

  // Place two isotropic pedestrians so their bounds are 0.1 and 0.2.
  const double u_scale = 0.05;
  const double sigma = std::sqrt(standing(Vec2::Zero(), u_scale).at(1.0).cov(0, 0));
  auto at_bound = [&](double p) {
    return standing(Vec2(0.8 - sigma * normal_quantile(p), 0.0), u_scale);
  };
  const std::vector<PedestrianPrediction> two{at_bound(0.1), at_bound(0.2)};
  CHECK(span::ped_collision_bound(Vec2::Zero(), two[0], 1.0, cfg) == doctest::Approx(0.1));
  CHECK(span::ped_collision_bound(Vec2::Zero(), two[1], 1.0, cfg) == doctest::Approx(0.2));
  CHECK_FALSE(span::ped_collision_check(Vec2::Zero(), two, 1.0, cfg));
}

TEST_CASE("static check against uniform maps") {
  CollisionConfig cfg;
  const auto free_map = OccupancyGrid::uniform(100, 100, 0.0, {0.1, {-5, -5}});
  const auto full_map = OccupancyGrid::uniform(100, 100, 1.0, {0.1, {-5, -5}});
  std::mt19937_64 rng(24);
  for (int i = 0; i < 200; ++i) {
    const Vec2 p(uniform(rng, -4.5, 4.5), uniform(rng, -4.5, 4.5));
    CHECK_FALSE(span::static_collision_check(p, free_map, cfg));
    CHECK(span::static_collision_check(p, full_map, cfg));
  }
}

TEST_CASE("static check flips at the disk radius plus the robot radius") {
  CollisionConfig cfg;
  const double res = 0.1;
  const double disk_r = 0.7;
  const Vec2 center(0.0, 0.0);
  std::vector<double> values(100 * 100);
  const OccupancyGrid shape(100, 100, values, {res, {-5, -5}});
  for (int iy = 0; iy < 100; ++iy) {
    for (int ix = 0; ix < 100; ++ix) {
      if ((shape.cell_center(ix, iy) - center).norm() <= disk_r) values[iy * 100 + ix] = 1.0;
    }
  }
  const OccupancyGrid map(100, 100, values, {res, {-5, -5}});
  std::mt19937_64 rng(25);
  for (int i = 0; i < 2000; ++i) {
    const double angle = uniform(rng, 0, 2 * std::numbers::pi);
    const double dist = uniform(rng, 0.0, 2.5);
    const Vec2 p = center + dist * Vec2(std::cos(angle), std::sin(angle));
    const bool hit = span::static_collision_check(p, map, cfg);
    if (dist <= disk_r + cfg.r_robot - res) CHECK(hit);
    if (dist > disk_r + cfg.r_robot + res) CHECK_FALSE(hit);
  }
}

TEST_CASE("time to collision examples") {
  CollisionConfig cfg;
  const span::RobotState x0{0.0, 0.0, 0.0};
  const span::Control u{1.0, 0.0};
  CHECK(span::time_to_collision(x0, u, {}, nullptr, cfg) == kNoCollision);
  const auto free_map = OccupancyGrid::uniform(200, 100, 0.0, {0.1, {-5, -5}});
  CHECK(span::time_to_collision(x0, u, {}, &free_map, cfg) == kNoCollision);

  const std::vector<PedestrianPrediction> ped{standing(Vec2(2.0, 0.0))};
  const double tau_ped = span::time_to_collision(x0, u, ped, nullptr, cfg);
  CHECK(std::abs(tau_ped - 1.2) <= cfg.dt + 1e-9);

  // Occupied cells for x >= 2.
  std::vector<double> values(200 * 100, 0.0);
  for (int iy = 0; iy < 100; ++iy) {
    for (int ix = 70; ix < 200; ++ix) values[iy * 200 + ix] = 1.0;
  }
  const OccupancyGrid wall(200, 100, values, {0.1, {-5, -5}});
  const double tau_wall = span::time_to_collision(x0, u, {}, &wall, cfg);
  CHECK(std::abs(tau_wall - 1.6) <= cfg.dt + 1e-9);

  const double tau_both = span::time_to_collision(x0, u, ped, &wall, cfg);
  CHECK(tau_both == std::min(tau_ped, tau_wall));

  // Scan starts at dt: a collision at the start state alone is not reported.
  const std::vector<PedestrianPrediction> behind{standing(Vec2(-0.75, 0.0))};
  CHECK(span::time_to_collision(x0, u, behind, nullptr, cfg) == kNoCollision);
}

TEST_CASE("stricter threshold never delays collision") {
  std::mt19937_64 rng(26);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<PedestrianPrediction> peds;
    for (int i = 0; i < 3; ++i) {
      peds.push_back(walking(Vec2(uniform(rng, 1, 5), uniform(rng, -3, 3)),
                             Vec2(uniform(rng, -1, 1), uniform(rng, -1, 1)), 0.01, rng));
    }
    const span::Control u{uniform(rng, -1, 1), uniform(rng, -1, 1)};
    double prev = kNoCollision;
    for (double eps : {0.9, 0.6, 0.4, 0.25, 0.1, 0.01}) {
      CollisionConfig cfg;
      cfg.epsilon = eps;
      const double tau = span::time_to_collision({0, 0, 0}, u, peds, nullptr, cfg);
      CHECK(tau <= prev);
      prev = tau;
    }
  }
}

TEST_CASE("scene answers match the direct predicates") {
  std::mt19937_64 rng(27);
  std::vector<double> values(120 * 120, 0.0);
  for (int k = 0; k < 40; ++k) {
    const int cx = static_cast<int>(rng() % 120);
    const int cy = static_cast<int>(rng() % 120);
    for (int dy = -3; dy <= 3; ++dy)
      for (int dx = -3; dx <= 3; ++dx)
        if (cx + dx >= 0 && cx + dx < 120 && cy + dy >= 0 && cy + dy < 120)
          values[(cy + dy) * 120 + cx + dx] = uniform(rng, 0.0, 1.0);
  }
  const OccupancyGrid map(120, 120, values, {0.1, {-6, -6}});
  for (int trial = 0; trial < 60; ++trial) {
    CollisionConfig cfg;
    cfg.epsilon = uniform(rng, 0.05, 0.9);
    std::vector<PedestrianPrediction> peds;
    for (int i = 0; i < 6; ++i) {
      peds.push_back(walking(Vec2(uniform(rng, -4, 4), uniform(rng, -4, 4)),
                             Vec2(uniform(rng, -1, 1), uniform(rng, -1, 1)),
                             uniform(rng, 1e-4, 0.05), rng));
    }
    const CollisionScene scene(peds, &map, cfg);
    for (int i = 0; i < 40; ++i) {
      const span::RobotState x0{uniform(rng, -3, 3), uniform(rng, -3, 3),
                                uniform(rng, -3.1, 3.1)};
      const span::Control u{uniform(rng, -1, 1), uniform(rng, -1, 1)};
      CHECK(scene.time_to_collision(x0, u) == span::time_to_collision(x0, u, peds, &map, cfg));
    }
  }
}

TEST_CASE("config validation") {
  CollisionConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.epsilon = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.sweep_count = 4;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.dt = 5.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.r_ped = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
