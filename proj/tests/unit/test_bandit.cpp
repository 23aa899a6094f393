#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace opve;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST(LinUCB, FreshStateTiesToFirstAction) {
  LinUCBState s(3, 2);
  const Vector scores = s.scores(vec({0.3, -0.4}));
  EXPECT_DOUBLE_EQ(scores(0), scores(1));
  EXPECT_DOUBLE_EQ(scores(1), scores(2));
  EXPECT_EQ(s.select(vec({0.3, -0.4})), 0u);
}

TEST(LinUCB, ShermanMorrisonOracle) {
  // After x = e1, reward 1 on action 2: A^{-1} = I - e1 e1^T / 2, b = e1.
  LinUCBState s(3, 2, 1.0, 1.0);
  s.update(vec({1.0, 0.0}), 1, 1.0);
  for (const Vector& x : {vec({1.0, 0.0}), vec({0.3, 0.7}), vec({-2.0, 1.5})}) {
    const Matrix a_inv = Matrix::Identity(2, 2) - 0.5 * vec({1.0, 0.0}) * vec({1.0, 0.0}).transpose();
    const Vector theta = a_inv * vec({1.0, 0.0});
    const double updated = x.dot(theta) + std::sqrt(x.dot(a_inv * x));
    const double fresh = x.norm();
    const Vector scores = s.scores(x);
    EXPECT_NEAR(scores(1), updated, 1e-10);
    EXPECT_NEAR(scores(0), fresh, 1e-10);
    EXPECT_NEAR(scores(2), fresh, 1e-10);
  }
}

TEST(LinUCB, ZeroExplorationIsGreedy) {
  LinUCBState s(3, 2, 0.0);
  s.update(vec({1.0, 0.0}), 2, 1.0);
  s.update(vec({0.0, 1.0}), 0, 1.0);
  EXPECT_EQ(s.select(vec({1.0, 0.1})), 2u);
  EXPECT_EQ(s.select(vec({0.1, 1.0})), 0u);
}

TEST(LinUCB, UpdatesMatchBatchRegression) {
  Rng rng(1);
  LinUCBState s(1, 3, 1.0, 1.0);
  Matrix x(20, 3);
  Vector y(20);
  for (int i = 0; i < 20; ++i) {
    for (int j = 0; j < 3; ++j) x(i, j) = rng.normal();
    y(i) = rng.uniform();
    s.update(x.row(i).transpose(), 0, y(i));
  }
  const Matrix a = Matrix::Identity(3, 3) + x.transpose() * x;
  const Vector theta = a.ldlt().solve(x.transpose() * y);
  EXPECT_LT((s.theta(0) - theta).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((s.design(0) - s.design(0).transpose()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(Eigen::LLT<Matrix>(s.design(0)).info(), Eigen::Success);
  const Matrix before = s.design(0);
  s.update(Vector::Zero(3), 0, 1.0);
  EXPECT_EQ(s.design(0), before);
}

TEST(LinTS, PosteriorDrawsHaveStatedMoments) {
  LinTSState s(1, 2, 0.5);
  s.update(vec({1.0, 0.5}), 0, 1.0);
  s.update(vec({-0.3, 1.0}), 0, 0.0);
  const Vector mu = s.mean(0);
  const Matrix cov = s.covariance(0);
  EXPECT_LT((cov - cov.transpose()).cwiseAbs().maxCoeff(), 1e-14);
  // x^T theta over many single-arm draws: mean x^T mu, variance x^T Sigma x.
  Rng rng(2);
  const Vector x = vec({0.8, -0.6});
  // With one arm select() always returns 0, so re-derive the draw with the same recipe.
  const Eigen::LLT<Matrix> llt(s.design(0));
  double m = 0.0, m2 = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    Vector z(2);
    z << rng.normal(), rng.normal();
    const double v = x.dot(mu + 0.5 * llt.matrixU().solve(z));
    m += v;
    m2 += v * v;
  }
  m /= n;
  EXPECT_NEAR(m, x.dot(mu), 0.01);
  EXPECT_NEAR(m2 / n - m * m, x.dot(cov * x), 0.01);
}

TEST(LinTS, SelectionIsSeedDeterministic) {
  LinTSState s(3, 2);
  s.update(vec({1.0, 0.0}), 1, 1.0);
  Rng a(5), b(5);
  for (int i = 0; i < 50; ++i) ASSERT_EQ(s.select(vec({0.5, 0.5}), a), s.select(vec({0.5, 0.5}), b));
}

TEST(MixPolicy, Examples) {
  const Vector uniform = mix_policy(0, 0.0, 3);
  for (Eigen::Index a = 0; a < 3; ++a) EXPECT_NEAR(uniform(a), 1.0 / 3.0, 1e-15);
  const Vector p = mix_policy(0, 0.7, 3);
  EXPECT_NEAR(p(0), 0.8, 1e-15);
  EXPECT_NEAR(p(1), 0.1, 1e-15);
  EXPECT_NEAR(p(2), 0.1, 1e-15);
  const Vector lit = mix_policy(0, 0.7, 3, MixMode::Floor);
  const double mass = 0.7 + 0.3 * 0.1;
  EXPECT_NEAR(lit(0), (0.7 + 0.01) / mass, 1e-15);
  EXPECT_NEAR(lit(1), 0.01 / mass, 1e-15);
  EXPECT_THROW(mix_policy(3, 0.5, 3), ArgumentError);
  EXPECT_THROW(mix_policy(0, 1.5, 3), ArgumentError);
}

TEST(MixPolicy, PropertySweep) {
  Rng rng(3);
  for (int rep = 0; rep < 5000; ++rep) {
    const std::size_t k = 2 + rng.below(9);
    const double alpha = rng.uniform();
    const std::size_t sel = rng.below(k);
    for (auto mode : {MixMode::Uniform, MixMode::Floor}) {
      const Vector p = mix_policy(sel, alpha, k, mode);
      ASSERT_NEAR(p.sum(), 1.0, 1e-12);
      ASSERT_GT(p.minCoeff(), 0.0);
      if (mode == MixMode::Uniform) {
        ASSERT_GE(p.minCoeff(), (1 - alpha) / static_cast<double>(k) - 1e-15);
      }
    }
  }
}

TEST(SyntheticDGP, OneHotAndSignFlip) {
  Rng rng(4);
  const auto dgp = SyntheticDGP::random(rng, 10);
  const SyntheticDGP flipped(-dgp.signs());
  for (int i = 0; i < 100; ++i) {
    const auto draw = dgp.sample(rng);
    ASSERT_DOUBLE_EQ(draw.outcomes.sum(), 1.0);
    ASSERT_DOUBLE_EQ(draw.outcomes(static_cast<Eigen::Index>(draw.label)), 1.0);
    const Vector g = dgp.scores(draw.x);
    const Vector h = flipped.scores(draw.x);
    ASSERT_DOUBLE_EQ(g(0), h(0));
    ASSERT_DOUBLE_EQ(g(1), -h(1));
    ASSERT_DOUBLE_EQ(g(2), -h(2));
  }
  EXPECT_THROW(SyntheticDGP(vec({1.0, 0.5})), ArgumentError);
}

TEST(SyntheticDGP, LabelFrequenciesMatchAverageProbabilities) {
  Rng rng(5);
  const auto dgp = SyntheticDGP::random(rng, 10);
  Vector counts = Vector::Zero(3), avg = Vector::Zero(3);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto draw = dgp.sample(rng);
    counts(static_cast<Eigen::Index>(draw.label)) += 1;
    avg += dgp.label_probabilities(draw.x);
  }
  EXPECT_LT((counts / n - avg / n).cwiseAbs().maxCoeff(), 0.01);
}

TEST(SyntheticExperiment, EmptyLogAndDeterminism) {
  SyntheticConfig cfg;
  cfg.train_size = 200;
  cfg.truth_size = 2000;
  cfg.log_size = 0;
  Rng rng(6);
  const auto empty = build_synthetic_experiment(cfg, rng);
  EXPECT_TRUE(empty.log.empty());
  EXPECT_GT(empty.r_true, 0.0);
  EXPECT_LT(empty.r_true, 1.0);

  cfg.log_size = 120;
  for (auto algo : {BanditAlgorithm::LinUCB, BanditAlgorithm::LinTS}) {
    cfg.logging.algorithm = algo;
    Rng a(7), b(7);
    const auto ea = build_synthetic_experiment(cfg, a);
    const auto eb = build_synthetic_experiment(cfg, b);
    EXPECT_EQ(ea.r_true, eb.r_true);
    ASSERT_EQ(ea.log.size(), 120u);
    for (std::size_t i = 0; i < 120; ++i) {
      ASSERT_EQ(ea.log[i].x, eb.log[i].x);
      ASSERT_EQ(ea.log[i].action, eb.log[i].action);
      ASSERT_EQ(ea.log[i].reward, eb.log[i].reward);
      ASSERT_EQ(*ea.log[i].true_propensity, *eb.log[i].true_propensity);
    }
  }
}

TEST(SyntheticExperiment, LogsPassValidation) {
  SyntheticConfig cfg;
  cfg.train_size = 200;
  cfg.truth_size = 500;
  cfg.log_size = 100;
  for (int rep = 0; rep < 100; ++rep) {
    Rng rng(derive_seed(11, rep));
    cfg.logging.algorithm = rep % 2 ? BanditAlgorithm::LinUCB : BanditAlgorithm::LinTS;
    cfg.logging.alpha = 0.1 + 0.8 * rng.uniform();
    const auto ex = build_synthetic_experiment(cfg, rng);
    const auto report = validate_log(ex.log, ex.eval_fn, mixing_ratio_bound(cfg.logging.alpha, 3));
    ASSERT_TRUE(report.ok) << "rep " << rep;
  }
}

TEST(ClassificationToBandit, RewardsAndRecordedPropensities) {
  Rng rng(8);
  const std::size_t n = 300, k = 4;
  PotentialOutcomeDataset data{Matrix(n, 3), Matrix::Zero(n, k)};
  std::vector<std::size_t> labels(n), rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j) data.covariates(i, j) = rng.normal();
    labels[i] = rng.below(k);
    data.outcomes(i, labels[i]) = 1.0;
    rows[i] = i;
  }
  LoggingPolicyConfig cfg;
  cfg.algorithm = BanditAlgorithm::LinUCB;
  Rng a(9);
  const BanditLog log = classification_to_bandit(data, rows, cfg, a);
  for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(log[i].reward, log[i].action == labels[i] ? 1.0 : 0.0);

  // Replay: regenerate the mixed policy with the same seed and compare the vector used at each step.
  Rng b(9);
  MixedLoggingPolicy replay(cfg, k, 3);
  for (std::size_t i = 0; i < n; ++i) {
    auto [action, p] = replay.act(log[i].x, b);
    ASSERT_EQ(action, log[i].action);
    ASSERT_EQ(p, *log[i].true_propensity);
    replay.update(log[i].x, action, log[i].reward);
  }
}

TEST(ClassificationToBandit, UniformLoggingFrequencies) {
  Rng rng(10);
  const std::size_t n = 30000, k = 3;
  PotentialOutcomeDataset data{Matrix::Zero(n, 2), Matrix::Zero(n, k)};
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    data.outcomes(i, i % k) = 1.0;
    rows[i] = i;
  }
  LoggingPolicyConfig cfg;
  cfg.algorithm = BanditAlgorithm::LinUCB;
  cfg.alpha = 0.0;
  const BanditLog log = classification_to_bandit(data, rows, cfg, rng);
  std::vector<double> counts(k, 0.0);
  for (const auto& r : log.records()) counts[r.action] += 1;
  const double se = std::sqrt((1.0 / k) * (1 - 1.0 / k) / n);
  for (double c : counts) EXPECT_NEAR(c / n, 1.0 / k, 3 * se);
}

TEST(BenchmarkExperiment, OracleIsMeanTargetProbabilityOfLabel) {
  Rng rng(12);
  const std::size_t n = 500, k = 3;
  PotentialOutcomeDataset data{Matrix(n, 2), Matrix::Zero(n, k)};
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    data.covariates(i, 0) = rng.normal();
    data.covariates(i, 1) = rng.normal();
    labels[i] = data.covariates(i, 0) > 0.5 ? 2 : (data.covariates(i, 1) > 0 ? 1 : 0);
    data.outcomes(i, labels[i]) = 1.0;
  }
  BenchmarkConfig cfg;
  cfg.log_size = 200;
  Rng a(13);
  const auto ex = build_benchmark_experiment(data, labels, cfg, a);
  EXPECT_EQ(ex.log.size(), 200u);
  const auto report = validate_log(ex.log, ex.eval_fn, mixing_ratio_bound(cfg.logging.alpha, k));
  EXPECT_TRUE(report.ok);
  // pi^e puts at least 0.1 / K on every action.
  const Vector w = ex.eval_fn.weights(data.covariates.row(0).transpose());
  EXPECT_GE(w.minCoeff(), 0.1 / 3 - 1e-12);
  EXPECT_GT(ex.r_true, 0.5);
  cfg.log_size = 450;
  Rng c(13);
  EXPECT_THROW(build_benchmark_experiment(data, labels, cfg, c), ArgumentError);
}

TEST(LinUCB, LoggingPolicyStabilizes) {
  // Stationary environment: successive policies move less as data accumulates.
  Rng rng(14);
  const auto dgp = SyntheticDGP::random(rng, 5);
  std::vector<Vector> probe;
  for (int i = 0; i < 200; ++i) probe.push_back(dgp.sample(rng).x);
  LinUCBState state(3, 5);
  auto policy_at = [&](const LinUCBState& s) {
    std::vector<Vector> out;
    for (const auto& x : probe) out.push_back(mix_policy(s.select(x), 0.7, 3));
    return out;
  };
  auto tv = [](const std::vector<Vector>& p, const std::vector<Vector>& q) {
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total += 0.5 * (p[i] - q[i]).cwiseAbs().sum();
    return total / static_cast<double>(p.size());
  };
  std::vector<std::vector<Vector>> snapshots{policy_at(state)};
  for (int t = 1; t <= 2000; ++t) {
    const auto draw = dgp.sample(rng);
    const std::size_t a = state.select(draw.x);
    state.update(draw.x, a, draw.outcomes(static_cast<Eigen::Index>(a)));
    if (t % 500 == 0) snapshots.push_back(policy_at(state));
  }
  double previous = tv(snapshots[0], snapshots[1]);
  for (std::size_t i = 1; i + 1 < snapshots.size(); ++i) {
    const double current = tv(snapshots[i], snapshots[i + 1]);
    EXPECT_LE(current, previous + 0.05) << "window " << i;
    previous = current;
  }
}
