#pragma once

#include <cmath>
#include <cstddef>
#include <algorithm>
#include <optional>
#include <span>
#include <type_traits>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "opve/core.hpp"
#include "opve/error.hpp"
#include "opve/logistic.hpp"
#include "opve/random.hpp"

namespace opve {

namespace detail {

// argmax with ties going to the lowest index.
inline std::size_t argmax_lowest(const Vector& scores) {
  std::size_t best = 0;
  for (Eigen::Index a = 1; a < scores.size(); ++a) {
    if (scores(a) > scores(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(a);
  }
  return best;
}

}  // namespace detail

/// Disjoint-arm LinUCB: one ridge model per action.
class LinUCBState {
 public:
  LinUCBState(std::size_t num_actions, std::size_t dim, double exploration = 1.0, double ridge = 1.0)
      : exploration_(exploration), ridge_(ridge) {
    if (ridge <= 0.0) throw ArgumentError("LinUCB ridge must be positive");
    const auto d = static_cast<Eigen::Index>(dim);
    design_.assign(num_actions, ridge * Matrix::Identity(d, d));
    response_.assign(num_actions, Vector::Zero(d));
  }

  std::size_t num_actions() const { return design_.size(); }
  const Matrix& design(std::size_t a) const { return design_.at(a); }
  const Vector& response(std::size_t a) const { return response_.at(a); }
  double exploration() const { return exploration_; }

  Vector theta(std::size_t a) const { return design_.at(a).llt().solve(response_.at(a)); }

  // x^T theta_a + alpha * sqrt(x^T A_a^{-1} x) for every arm.
  Vector scores(const Vector& x) const {
    Vector out(static_cast<Eigen::Index>(design_.size()));
    for (std::size_t a = 0; a < design_.size(); ++a) {
      const Eigen::LLT<Matrix> llt(design_[a]);
      const double mean = x.dot(llt.solve(response_[a]));
      const double width = std::sqrt(std::max(0.0, x.dot(llt.solve(x))));
      out(static_cast<Eigen::Index>(a)) = mean + exploration_ * width;
    }
    return out;
  }

  std::size_t select(const Vector& x) const { return detail::argmax_lowest(scores(x)); }

  void update(const Vector& x, std::size_t action, double reward) {
    design_.at(action).noalias() += x * x.transpose();
    response_.at(action) += reward * x;
  }

 private:
  double exploration_;
  double ridge_;
  std::vector<Matrix> design_;
  std::vector<Vector> response_;
};

/// Disjoint-arm linear Thompson sampling with posterior N(A_a^{-1} b_a, v^2 A_a^{-1}).
class LinTSState {
 public:
  LinTSState(std::size_t num_actions, std::size_t dim, double prior_scale = 1.0, double ridge = 1.0)
      : prior_scale_(prior_scale) {
    if (ridge <= 0.0) throw ArgumentError("LinTS ridge must be positive");
    const auto d = static_cast<Eigen::Index>(dim);
    design_.assign(num_actions, ridge * Matrix::Identity(d, d));
    response_.assign(num_actions, Vector::Zero(d));
  }

  std::size_t num_actions() const { return design_.size(); }
  const Matrix& design(std::size_t a) const { return design_.at(a); }
  Vector mean(std::size_t a) const { return design_.at(a).llt().solve(response_.at(a)); }
  Matrix covariance(std::size_t a) const {
    const auto d = design_.at(a).rows();
    return prior_scale_ * prior_scale_ * design_.at(a).llt().solve(Matrix::Identity(d, d));
  }

  // One posterior draw per arm, then argmax of x^T theta.
  std::size_t select(const Vector& x, Rng& rng) const {
    Vector sampled(static_cast<Eigen::Index>(design_.size()));
    for (std::size_t a = 0; a < design_.size(); ++a) {
      const Eigen::LLT<Matrix> llt(design_[a]);
      const Vector mu = llt.solve(response_[a]);
      Vector z(mu.size());
      for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
      // A = L L^T, so L^{-T} z has covariance A^{-1}.
      const Vector theta = mu + prior_scale_ * llt.matrixU().solve(z);
      sampled(static_cast<Eigen::Index>(a)) = x.dot(theta);
    }
    return detail::argmax_lowest(sampled);
  }

  void update(const Vector& x, std::size_t action, double reward) {
    design_.at(action).noalias() += x * x.transpose();
    response_.at(action) += reward * x;
  }

 private:
  double prior_scale_;
  std::vector<Matrix> design_;
  std::vector<Vector> response_;
};

// Non-adaptive base policy: argmax of a fixed classifier.
class ClassifierPolicy {
 public:
  explicit ClassifierPolicy(SoftmaxRegression model) : model_(std::move(model)) {}
  std::size_t select(const Vector& x) const { return model_.predict(x); }
  void update(const Vector&, std::size_t, double) {}

 private:
  SoftmaxRegression model_;
};

enum class MixMode { Uniform, Floor };

/// alpha * point_mass(selected) + (1 - alpha) * floor. Uniform mode uses the
/// floor 1/K; Floor uses 0.1/K and renormalizes.
inline Vector mix_policy(std::size_t selected, double alpha, std::size_t num_actions, MixMode mode = MixMode::Uniform) {
  if (selected >= num_actions) throw ArgumentError("selected action outside 1..K");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("mixing alpha must lie in [0, 1]");
  const double k = static_cast<double>(num_actions);
  const double floor = mode == MixMode::Uniform ? 1.0 / k : 0.1 / k;
  Vector p = Vector::Constant(static_cast<Eigen::Index>(num_actions), (1.0 - alpha) * floor);
  p(static_cast<Eigen::Index>(selected)) += alpha;
  return p / p.sum();
}

// Bound on pi^e / pi for probability-type pi^e under uniform-mode mixing.
inline double mixing_ratio_bound(double alpha, std::size_t num_actions) {
  return static_cast<double>(num_actions) / (1.0 - alpha);
}

enum class BanditAlgorithm { LinUCB, LinTS, Logistic };

inline std::string_view to_string(BanditAlgorithm algo) {
  switch (algo) {
    case BanditAlgorithm::LinUCB: return "LinUCB";
    case BanditAlgorithm::LinTS: return "LinTS";
    case BanditAlgorithm::Logistic: return "Logistic";
  }
  return "?";
}

struct LoggingPolicyConfig {
  BanditAlgorithm algorithm = BanditAlgorithm::LinTS;
  double alpha = 0.7;
  MixMode mix_mode = MixMode::Uniform;
  double ucb_exploration = 1.0;
  double ridge = 1.0;
  double ts_prior_scale = 1.0;
};

/// Adaptive logging loop shared by the synthetic and classification scenarios:
/// select with the base policy, mix, draw, reveal y(A_t), update.
class MixedLoggingPolicy {
 public:
  MixedLoggingPolicy(const LoggingPolicyConfig& config, std::size_t num_actions, std::size_t dim,
                     std::optional<SoftmaxRegression> classifier = std::nullopt)
      : config_(config),
        num_actions_(num_actions),
        base_(make_base(config, num_actions, dim, std::move(classifier))) {}

  // Returns (drawn action, propensity vector used to draw it).
  std::pair<std::size_t, Vector> act(const Vector& x, Rng& rng) {
    const std::size_t selected = std::visit(
        [&](auto& policy) -> std::size_t {
          if constexpr (std::is_same_v<std::decay_t<decltype(policy)>, LinTSState>) {
            return policy.select(x, rng);
          } else {
            return policy.select(x);
          }
        },
        base_);
    Vector p = mix_policy(selected, config_.alpha, num_actions_, config_.mix_mode);
    const std::size_t drawn = rng.categorical(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
    return {drawn, std::move(p)};
  }

  void update(const Vector& x, std::size_t action, double reward) {
    std::visit([&](auto& policy) { policy.update(x, action, reward); }, base_);
  }

 private:
  using Base = std::variant<LinUCBState, LinTSState, ClassifierPolicy>;

  static Base make_base(const LoggingPolicyConfig& config, std::size_t num_actions, std::size_t dim,
                        std::optional<SoftmaxRegression> classifier) {
    switch (config.algorithm) {
      case BanditAlgorithm::LinUCB:
        return LinUCBState(num_actions, dim, config.ucb_exploration, config.ridge);
      case BanditAlgorithm::LinTS:
        return LinTSState(num_actions, dim, config.ts_prior_scale, config.ridge);
      case BanditAlgorithm::Logistic:
        break;
    }
    if (!classifier) throw ArgumentError("logistic logging policy needs a classifier");
    return ClassifierPolicy(std::move(*classifier));
  }

  LoggingPolicyConfig config_;
  std::size_t num_actions_;
  Base base_;
};

/// Synthetic classification-style DGP: x ~ N(0, I_d), label ~ softmax(g(., x)),
/// y(a) = 1[a = label], with g(1,x) = sum x_d, g(2,x) = sum W_d x_d^2,
/// g(3,x) = sum W_d |x_d|.
class SyntheticDGP {
 public:
  static constexpr std::size_t kNumActions = 3;

  explicit SyntheticDGP(Vector signs) : signs_(std::move(signs)) {
    for (Eigen::Index i = 0; i < signs_.size(); ++i) {
      if (signs_(i) != 1.0 && signs_(i) != -1.0) throw ArgumentError("sign vector entries must be +1 or -1");
    }
  }

  static SyntheticDGP random(Rng& rng, std::size_t dim = 10) {
    Vector signs(static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < signs.size(); ++i) signs(i) = rng.uniform() < 0.5 ? -1.0 : 1.0;
    return SyntheticDGP(std::move(signs));
  }

  std::size_t dim() const { return static_cast<std::size_t>(signs_.size()); }
  const Vector& signs() const { return signs_; }

  Vector scores(const Vector& x) const {
    Vector g(3);
    g(0) = x.sum();
    g(1) = signs_.dot(x.cwiseAbs2());
    g(2) = signs_.dot(x.cwiseAbs());
    return g;
  }

  Vector label_probabilities(const Vector& x) const { return softmax(scores(x)); }

  struct Draw {
    Vector x;
    std::size_t label = 0;
    Vector outcomes;  // one-hot y(1..3)
  };

  Draw sample(Rng& rng) const {
    Draw d;
    d.x.resize(signs_.size());
    for (Eigen::Index i = 0; i < d.x.size(); ++i) d.x(i) = rng.normal();
    const Vector q = label_probabilities(d.x);
    d.label = rng.categorical(std::span<const double>(q.data(), 3));
    d.outcomes = Vector::Zero(3);
    d.outcomes(static_cast<Eigen::Index>(d.label)) = 1.0;
    return d;
  }

 private:
  Vector signs_;
};

struct SyntheticConfig {
  std::size_t train_size = 1000;     // T1: fits the evaluation policy
  std::size_t truth_size = 100000;   // T2: ground-truth policy value
  std::size_t log_size = 750;        // T3: adaptive log
  std::size_t dim = 10;
  LoggingPolicyConfig logging;
  GradientDescentOptions evaluation_fit;
  // Estimate R by drawing actions from pi^e on the truth sample instead of the exact expectation.
  bool resample_truth = false;
};

struct SyntheticExperiment {
  SyntheticDGP dgp;
  EvaluationFunction eval_fn;
  double r_true = 0.0;
  BanditLog log;
};

/// Three-sample protocol: fit pi^e on S1, compute R(pi^e) on S2, then run the
/// mixed adaptive policy on S3 to produce the dependent log.
inline SyntheticExperiment build_synthetic_experiment(const SyntheticConfig& config, Rng& rng) {
  SyntheticDGP dgp = SyntheticDGP::random(rng, config.dim);
  const auto d = static_cast<Eigen::Index>(config.dim);

  Matrix train_x(static_cast<Eigen::Index>(config.train_size), d);
  std::vector<std::size_t> train_labels(config.train_size);
  for (std::size_t i = 0; i < config.train_size; ++i) {
    auto draw = dgp.sample(rng);
    train_x.row(static_cast<Eigen::Index>(i)) = draw.x.transpose();
    train_labels[i] = draw.label;
  }
  SoftmaxRegression model = fit_softmax_regression(train_x, train_labels, 3, config.evaluation_fit);
  EvaluationFunction eval_fn = EvaluationFunction::softmax_model(model);

  double total = 0.0;
  for (std::size_t i = 0; i < config.truth_size; ++i) {
    auto draw = dgp.sample(rng);
    const Vector w = eval_fn.weights(draw.x);
    if (config.resample_truth) {
      const std::size_t a = rng.categorical(std::span<const double>(w.data(), 3));
      total += draw.outcomes(static_cast<Eigen::Index>(a));
    } else {
      total += w.dot(draw.outcomes);
    }
  }
  const double r_true = config.truth_size > 0 ? total / static_cast<double>(config.truth_size) : 0.0;

  BanditLog log(3, config.dim);
  MixedLoggingPolicy policy(config.logging, 3, config.dim);
  for (std::size_t t = 0; t < config.log_size; ++t) {
    auto draw = dgp.sample(rng);
    auto [action, propensity] = policy.act(draw.x, rng);
    const double reward = draw.outcomes(static_cast<Eigen::Index>(action));
    policy.update(draw.x, action, reward);
    log.append(std::move(draw.x), action, reward, std::move(propensity));
  }
  return SyntheticExperiment{std::move(dgp), std::move(eval_fn), r_true, std::move(log)};
}

/// Runs the mixed logging policy over dataset rows (in the given order),
/// revealing y(A_t) = 1[A_t = label].
inline BanditLog classification_to_bandit(const PotentialOutcomeDataset& data, std::span<const std::size_t> rows,
                                          const LoggingPolicyConfig& logging, Rng& rng,
                                          std::optional<SoftmaxRegression> classifier = std::nullopt) {
  const std::size_t k = data.num_actions();
  BanditLog log(k, data.dim());
  MixedLoggingPolicy policy(logging, k, data.dim(), std::move(classifier));
  for (std::size_t row : rows) {
    if (row >= data.size()) throw StructuralError("row index outside dataset");
    Vector x = data.covariates.row(static_cast<Eigen::Index>(row)).transpose();
    auto [action, propensity] = policy.act(x, rng);
    const double reward = data.outcomes(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(action));
    policy.update(x, action, reward);
    log.append(std::move(x), action, reward, std::move(propensity));
  }
  return log;
}

struct BenchmarkConfig {
  std::size_t log_size = 1000;
  double holdout_fraction = 0.2;  // rows used only to fit pi^d
  double evaluation_blend = 0.1;  // pi^e = (1 - blend) pi^d + blend / K
  LoggingPolicyConfig logging;
  GradientDescentOptions classifier_fit;
};

struct BenchmarkExperiment {
  EvaluationFunction eval_fn;
  double r_true = 0.0;
  BanditLog log;
};

/// Classification-to-bandit protocol: shuffle rows, fit pi^d on a disjoint
/// holdout, take R(pi^e) over the remaining pool, and log the first T pool rows.
inline BenchmarkExperiment build_benchmark_experiment(const PotentialOutcomeDataset& data,
                                                      std::span<const std::size_t> labels,
                                                      const BenchmarkConfig& config, Rng& rng) {
  const std::size_t n = data.size();
  const std::size_t k = data.num_actions();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());
  const auto holdout = static_cast<std::size_t>(std::floor(config.holdout_fraction * static_cast<double>(n)));
  if (holdout == 0 || holdout >= n) throw ArgumentError("holdout split leaves an empty side");
  const std::size_t pool = n - holdout;
  if (config.log_size > pool) throw ArgumentError("log size exceeds the rows left after the holdout split");

  Matrix fit_x(static_cast<Eigen::Index>(holdout), static_cast<Eigen::Index>(data.dim()));
  std::vector<std::size_t> fit_labels(holdout);
  for (std::size_t i = 0; i < holdout; ++i) {
    fit_x.row(static_cast<Eigen::Index>(i)) = data.covariates.row(static_cast<Eigen::Index>(order[i]));
    fit_labels[i] = labels[order[i]];
  }
  SoftmaxRegression classifier = fit_softmax_regression(fit_x, fit_labels, k, config.classifier_fit);
  EvaluationFunction eval_fn = EvaluationFunction::softmax_model(classifier, config.evaluation_blend);

  std::vector<std::size_t> pool_rows(order.begin() + static_cast<std::ptrdiff_t>(holdout), order.end());
  double total = 0.0;
  for (std::size_t row : pool_rows) {
    const Vector x = data.covariates.row(static_cast<Eigen::Index>(row)).transpose();
    total += eval_fn.weights(x).dot(data.outcomes.row(static_cast<Eigen::Index>(row)).transpose());
  }
  const double r_true = total / static_cast<double>(pool);

  std::span<const std::size_t> log_rows(pool_rows.data(), config.log_size);
  BanditLog log = classification_to_bandit(data, log_rows, config.logging, rng, classifier);
  return BenchmarkExperiment{std::move(eval_fn), r_true, std::move(log)};
}

}  // namespace opve
