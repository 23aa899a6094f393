#pragma once

#include <vector>

#include "opve/opve.hpp"

namespace opve::fixtures {

// Random log with recorded propensities drawn from a Dirichlet-like vector
// floored at `floor`, Bernoulli rewards.
inline BanditLog random_log(Rng& rng, std::size_t horizon, std::size_t k = 3, std::size_t d = 2, double floor = 0.05) {
  BanditLog log(k, d);
  for (std::size_t t = 0; t < horizon; ++t) {
    Vector x(static_cast<Eigen::Index>(d));
    for (auto& v : x) v = rng.normal();
    Vector p(static_cast<Eigen::Index>(k));
    for (auto& v : p) v = floor + rng.uniform();
    p /= p.sum();
    const std::size_t a = rng.categorical(std::span<const double>(p.data(), k));
    const double y = rng.uniform() < 0.3 + 0.1 * static_cast<double>(a) ? 1.0 : 0.0;
    log.append(std::move(x), a, y, p);
  }
  return log;
}

// Random probability-type evaluation function of x (softmax of a fixed linear map).
inline EvaluationFunction random_policy(Rng& rng, std::size_t k, std::size_t d) {
  Matrix coef(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d + 1));
  for (auto& v : coef.reshaped()) v = rng.normal();
  return EvaluationFunction::softmax_model(SoftmaxRegression(coef));
}

// Trajectory whose propensity is the logged truth; outcome is the given model.
inline NuisanceTrajectory truth_trajectory(const BanditLog& log, OutcomeModel outcome) {
  return NuisanceTrajectory::constant(log.size(), std::move(outcome), PropensityModel::logged_truth(log.num_actions()));
}

}  // namespace opve::fixtures
