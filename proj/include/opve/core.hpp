#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "opve/error.hpp"
#include "opve/logistic.hpp"

namespace opve {

// Absolute tolerance for "sums to one" checks on probability vectors.
inline constexpr double kSumTolerance = 1e-9;

/// One period of an adaptive experiment.
///
/// `action` is 0-based internally; the CSV wire format is 1-based.
/// `true_propensity` is the logging distribution pi_{t-1}(.|x) actually used
/// to draw the action, when the logging system recorded it.
struct LogRecord {
  std::size_t t = 0;
  Vector x;
  std::size_t action = 0;
  double reward = 0.0;
  std::optional<Vector> true_propensity;
};

/// Contiguous, read-only window onto the first n records of a log.
class LogView {
 public:
  LogView(std::span<const LogRecord> records, std::size_t num_actions, std::size_t dim)
      : records_(records), num_actions_(num_actions), dim_(dim) {}

  std::span<const LogRecord> records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::size_t num_actions() const { return num_actions_; }
  std::size_t dim() const { return dim_; }
  const LogRecord& operator[](std::size_t i) const { return records_[i]; }
  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

 private:
  std::span<const LogRecord> records_;
  std::size_t num_actions_;
  std::size_t dim_;
};

/// Time-ordered dependent sample {(X_t, A_t, Y_t)}.
///
/// Appending enforces the structural invariants: t runs 1, 2, ... without gaps,
/// every covariate has dimension d, actions lie in [0, K), and recorded
/// propensities have K finite nonnegative entries. Probability-level checks
/// (positivity, sum to one, overlap) belong to validate_log.
class BanditLog {
 public:
  BanditLog(std::size_t num_actions, std::size_t dim) : num_actions_(num_actions), dim_(dim) {
    if (num_actions_ < 1) throw StructuralError("bandit log needs at least one action");
  }

  void append(LogRecord record) {
    if (record.t != records_.size() + 1) {
      throw StructuralError("record t=" + std::to_string(record.t) + " breaks ordering; expected t=" +
                            std::to_string(records_.size() + 1));
    }
    if (static_cast<std::size_t>(record.x.size()) != dim_) {
      throw StructuralError("record t=" + std::to_string(record.t) + " has covariate dimension " +
                            std::to_string(record.x.size()) + ", log has d=" + std::to_string(dim_));
    }
    if (!record.x.allFinite()) {
      throw StructuralError("record t=" + std::to_string(record.t) + " has non-finite covariates");
    }
    if (record.action >= num_actions_) {
      throw StructuralError("record t=" + std::to_string(record.t) + " has action outside 1..K");
    }
    if (!std::isfinite(record.reward)) {
      throw StructuralError("record t=" + std::to_string(record.t) + " has non-finite reward");
    }
    if (record.true_propensity) {
      const Vector& p = *record.true_propensity;
      if (static_cast<std::size_t>(p.size()) != num_actions_) {
        throw StructuralError("record t=" + std::to_string(record.t) + " propensity length differs from K");
      }
      if (!p.allFinite() || (p.array() < 0.0).any()) {
        throw StructuralError("record t=" + std::to_string(record.t) + " has invalid propensity entries");
      }
    }
    records_.push_back(std::move(record));
  }

  // Convenience for generators: assigns the next t.
  void append(Vector x, std::size_t action, double reward, std::optional<Vector> propensity = std::nullopt) {
    append(LogRecord{records_.size() + 1, std::move(x), action, reward, std::move(propensity)});
  }

  std::size_t num_actions() const { return num_actions_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::vector<LogRecord>& records() const { return records_; }
  const LogRecord& operator[](std::size_t i) const { return records_[i]; }

  bool has_true_propensities() const {
    return std::all_of(records_.begin(), records_.end(),
                       [](const LogRecord& r) { return r.true_propensity.has_value(); });
  }

  LogView view() const { return LogView(records_, num_actions_, dim_); }

  // Records 1..n (the history Omega_n).
  LogView prefix(std::size_t n) const {
    if (n > records_.size()) throw StructuralError("prefix longer than log");
    return LogView(std::span<const LogRecord>(records_.data(), n), num_actions_, dim_);
  }

 private:
  std::size_t num_actions_;
  std::size_t dim_;
  std::vector<LogRecord> records_;
};

/// Evaluation function pi^e(a | x).
///
/// Probability-type kinds return a distribution over actions; the
/// signed-contrast kind may carry negative weights (ATE-style contrasts).
class EvaluationFunction {
 public:
  enum class Kind { TabularSoftmaxModel, SignedContrast, ConstantAction };
  using WeightFn = std::function<Vector(const Vector&)>;

  // (1 - blend) * softmax model + blend * uniform. blend = 0.1 gives 0.9 pi^d + 0.1 / K.
  static EvaluationFunction softmax_model(SoftmaxRegression model, double blend = 0.0) {
    if (blend < 0.0 || blend > 1.0) throw ArgumentError("softmax blend must lie in [0, 1]");
    const std::size_t k = model.num_classes();
    auto shared = std::make_shared<const SoftmaxRegression>(std::move(model));
    return EvaluationFunction(Kind::TabularSoftmaxModel, k, [shared, blend, k](const Vector& x) {
      Vector p = shared->predict_proba(x);
      if (blend > 0.0) p = (1.0 - blend) * p.array() + blend / static_cast<double>(k);
      return p;
    });
  }

  // Covariate-independent weights, e.g. (1, -1) for an ATE contrast.
  static EvaluationFunction signed_contrast(Vector weights) {
    if (!weights.allFinite()) throw ArgumentError("contrast weights must be finite");
    const auto k = static_cast<std::size_t>(weights.size());
    return EvaluationFunction(Kind::SignedContrast, k, [weights](const Vector&) { return weights; });
  }

  static EvaluationFunction constant_action(std::size_t num_actions, std::size_t action) {
    if (action >= num_actions) throw ArgumentError("constant action outside 1..K");
    Vector w = Vector::Zero(static_cast<Eigen::Index>(num_actions));
    w(static_cast<Eigen::Index>(action)) = 1.0;
    return EvaluationFunction(Kind::ConstantAction, num_actions, [w](const Vector&) { return w; });
  }

  static EvaluationFunction uniform(std::size_t num_actions) {
    const Vector w = Vector::Constant(static_cast<Eigen::Index>(num_actions), 1.0 / static_cast<double>(num_actions));
    return EvaluationFunction(Kind::TabularSoftmaxModel, num_actions, [w](const Vector&) { return w; });
  }

  // Arbitrary weight map. Probability-type kinds are checked on every call.
  static EvaluationFunction from_function(Kind kind, std::size_t num_actions, WeightFn fn) {
    return EvaluationFunction(kind, num_actions, std::move(fn));
  }

  // alpha * f + beta * g; always a signed contrast.
  static EvaluationFunction linear_combination(double alpha, const EvaluationFunction& f, double beta,
                                               const EvaluationFunction& g) {
    if (f.num_actions() != g.num_actions()) throw StructuralError("combined evaluation functions differ in K");
    return EvaluationFunction(Kind::SignedContrast, f.num_actions(),
                              [alpha, beta, f, g](const Vector& x) -> Vector {
                                return alpha * f.weights(x) + beta * g.weights(x);
                              });
  }

  Kind kind() const { return kind_; }
  std::size_t num_actions() const { return num_actions_; }
  bool is_probability() const { return kind_ != Kind::SignedContrast; }

  Vector weights(const Vector& x) const {
    Vector w = fn_(x);
    if (static_cast<std::size_t>(w.size()) != num_actions_) {
      throw StructuralError("evaluation function returned the wrong number of weights");
    }
    if (!w.allFinite()) throw ArgumentError("evaluation function produced non-finite weights");
    if (is_probability() && ((w.array() < 0.0).any() || std::abs(w.sum() - 1.0) > kSumTolerance)) {
      throw ArgumentError("probability-type evaluation function is not a distribution");
    }
    return w;
  }

 private:
  EvaluationFunction(Kind kind, std::size_t num_actions, WeightFn fn)
      : kind_(kind), num_actions_(num_actions), fn_(std::move(fn)) {}

  Kind kind_;
  std::size_t num_actions_;
  WeightFn fn_;
};

/// Rows of (x, y(1..K)) with every potential outcome observed.
struct PotentialOutcomeDataset {
  Matrix covariates;  // N x d
  Matrix outcomes;    // N x K

  std::size_t size() const { return static_cast<std::size_t>(covariates.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(covariates.cols()); }
  std::size_t num_actions() const { return static_cast<std::size_t>(outcomes.cols()); }

  void check(double reward_bound = 1.0) const {
    if (covariates.rows() != outcomes.rows()) throw StructuralError("covariate and outcome row counts differ");
    if (!covariates.allFinite() || !outcomes.allFinite()) throw StructuralError("dataset has non-finite entries");
    if (outcomes.size() > 0 && outcomes.cwiseAbs().maxCoeff() > reward_bound) {
      throw StructuralError("potential outcome exceeds the reward bound");
    }
  }
};

enum class EstimatorTag { DM, AdaIPW, EIPW, AIPW, AWAIPW, ADR, Batched };

inline std::string_view to_string(EstimatorTag tag) {
  switch (tag) {
    case EstimatorTag::DM: return "DM";
    case EstimatorTag::AdaIPW: return "IPW";
    case EstimatorTag::EIPW: return "EIPW";
    case EstimatorTag::AIPW: return "AIPW";
    case EstimatorTag::AWAIPW: return "AW-AIPW";
    case EstimatorTag::ADR: return "ADR";
    case EstimatorTag::Batched: return "BATCHED";
  }
  return "?";
}

inline std::optional<EstimatorTag> parse_estimator_tag(std::string_view name) {
  for (auto tag : {EstimatorTag::DM, EstimatorTag::AdaIPW, EstimatorTag::EIPW, EstimatorTag::AIPW,
                   EstimatorTag::AWAIPW, EstimatorTag::ADR, EstimatorTag::Batched}) {
    if (name == to_string(tag)) return tag;
  }
  if (name == "AdaIPW") return EstimatorTag::AdaIPW;
  if (name == "AWAIPW") return EstimatorTag::AWAIPW;
  return std::nullopt;
}

// True propensities are needed by these estimators.
inline bool needs_true_propensity(EstimatorTag tag) {
  return tag == EstimatorTag::AdaIPW || tag == EstimatorTag::AIPW || tag == EstimatorTag::AWAIPW;
}

struct EstimateResult {
  EstimatorTag tag = EstimatorTag::ADR;
  double value = 0.0;
  double variance = 0.0;  // plug-in asymptotic variance of sqrt(T) (value - R)
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::vector<double> scores;

  bool covers(double truth) const { return ci_low <= truth && truth <= ci_high; }
};

struct OverlapViolation {
  std::size_t t = 0;
  std::size_t action = 0;  // 0-based
  double target_weight = 0.0;
};

struct ValidationReport {
  bool ok = true;
  std::vector<OverlapViolation> overlap_violations;  // propensity <= 0 where pi^e != 0
  std::vector<std::size_t> unnormalized_records;     // t of propensity vectors not summing to 1
  std::size_t records_without_propensity = 0;
  std::optional<double> max_ratio;  // max |pi^e / pi| over positive propensities
  bool ratio_exceeds_bound = false;
  double max_abs_reward = 0.0;
  bool reward_exceeds_bound = false;
};

/// Checks overlap, bounded density ratio, and bounded rewards on a log.
/// The ratio is reported as observed; it is only compared when `c_pi` is given.
inline ValidationReport validate_log(const BanditLog& log, const EvaluationFunction& eval_fn,
                                     std::optional<double> c_pi = std::nullopt, double reward_bound = 1.0) {
  if (log.empty()) throw StructuralError("cannot validate an empty log");
  if (eval_fn.num_actions() != log.num_actions()) {
    throw StructuralError("evaluation function K differs from log K");
  }
  ValidationReport report;
  for (const LogRecord& rec : log.records()) {
    report.max_abs_reward = std::max(report.max_abs_reward, std::abs(rec.reward));
    if (!rec.true_propensity) {
      ++report.records_without_propensity;
      continue;
    }
    const Vector& p = *rec.true_propensity;
    if (std::abs(p.sum() - 1.0) > kSumTolerance) report.unnormalized_records.push_back(rec.t);
    const Vector target = eval_fn.weights(rec.x);
    for (Eigen::Index a = 0; a < p.size(); ++a) {
      if (p(a) <= 0.0) {
        if (target(a) != 0.0) {
          report.overlap_violations.push_back({rec.t, static_cast<std::size_t>(a), target(a)});
        }
        continue;
      }
      const double ratio = std::abs(target(a) / p(a));
      report.max_ratio = report.max_ratio ? std::max(*report.max_ratio, ratio) : ratio;
    }
  }
  report.reward_exceeds_bound = report.max_abs_reward > reward_bound;
  report.ratio_exceeds_bound = c_pi && report.max_ratio && *report.max_ratio > *c_pi;
  report.ok = report.overlap_violations.empty() && report.unnormalized_records.empty() &&
              !report.ratio_exceeds_bound && !report.reward_exceeds_bound;
  return report;
}

/// R(pi^e) = (1/N) sum_i sum_a pi^e(a | x_i) y_i(a).
inline double policy_value_oracle(const PotentialOutcomeDataset& data, const EvaluationFunction& eval_fn) {
  if (data.size() == 0) throw StructuralError("policy value oracle needs a nonempty dataset");
  if (data.covariates.rows() != data.outcomes.rows()) throw StructuralError("covariate and outcome rows differ");
  if (eval_fn.num_actions() != data.num_actions()) throw StructuralError("evaluation function K differs from data K");
  double total = 0.0;
  for (Eigen::Index i = 0; i < data.covariates.rows(); ++i) {
    const Vector x = data.covariates.row(i).transpose();
    total += eval_fn.weights(x).dot(data.outcomes.row(i).transpose());
  }
  return total / static_cast<double>(data.size());
}

}  // namespace opve
