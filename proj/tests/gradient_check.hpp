#pragma once

// Central finite-difference oracle for the predictor's training loss.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "span/predictor.hpp"

namespace span::testing {

/// Per-component relative error |a - n| / max(|a|, |n|, floor).
struct GradientCheck {
  double max_relative_error = 0.0;
  Eigen::VectorXd analytic;
  Eigen::VectorXd numeric;
};

inline GradientCheck check_loss_gradient(PredictorModel model,
                                         const std::vector<TrainingPair>& pairs,
                                         double step = 1e-5, double floor = 1e-6) {
  std::vector<const TrainingPair*> batch;
  for (const auto& p : pairs) batch.push_back(&p);
  GradientCheck out;
  (void)model.loss(batch, &out.analytic);
  const Eigen::VectorXd theta = model.parameters();
  out.numeric.resize(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd t = theta;
    t(i) = theta(i) + step;
    model.set_parameters(t);
    const double up = model.loss(batch, nullptr);
    t(i) = theta(i) - step;
    model.set_parameters(t);
    const double down = model.loss(batch, nullptr);
    out.numeric(i) = (up - down) / (2.0 * step);
  }
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double a = out.analytic(i);
    const double n = out.numeric(i);
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    out.max_relative_error = std::max(out.max_relative_error, std::abs(a - n) / denom);
  }
  return out;
}

/// Small random instance: m basis functions, a few pairs with targets near
/// the network's initial mean so the loss stays moderate.
inline std::vector<TrainingPair> random_pairs(int count, int p, int m, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<TrainingPair> pairs;
  for (int i = 0; i < count; ++i) {
    TrainingPair pair;
    for (int k = 0; k < p; ++k) pair.window.emplace_back(0.3 * normal(rng), 0.3 * normal(rng));
    pair.window.back().setZero();
    pair.target = WeightMatrix(m, 2);
    for (int r = 0; r < m; ++r) pair.target.row(r) << normal(rng), normal(rng);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

}  // namespace span::testing
