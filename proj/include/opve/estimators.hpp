#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "opve/core.hpp"
#include "opve/error.hpp"
#include "opve/nuisance.hpp"

namespace opve {

// Propensities below this at a needed action are a division hazard.
inline constexpr double kPropensityHazard = 1e-12;

inline constexpr double kZ95 = 1.959963984540054;

/// Everything one summand of the doubly robust score needs at step t.
struct ScoreInputs {
  const LogRecord& record;
  Vector propensity;  // true pi_{t-1}(.|X_t) or g_hat_{t-1}(.|X_t)
  Vector outcome;     // f(a, X_t) for every a; zeros for IPW
  Vector target;      // pi^e(a | X_t)
};

/// sum_a pi^e(a|x) 1[A=a] (Y - f(a,x)) / p(a|x) + sum_a pi^e(a|x) f(a,x).
inline double score_term(const ScoreInputs& in) {
  const auto a = static_cast<Eigen::Index>(in.record.action);
  double direct = in.target.dot(in.outcome);
  const double weight = in.target(a);
  if (weight == 0.0) return direct;
  const double p = in.propensity(a);
  if (!(p >= kPropensityHazard)) {
    throw DivisionHazardError("propensity " + std::to_string(p) + " at realized action of record t=" +
                              std::to_string(in.record.t));
  }
  return weight * (in.record.reward - in.outcome(a)) / p + direct;
}

// Population-divisor variance (1/T) sum (s - mean)^2.
inline double plugin_variance(std::span<const double> scores) {
  if (scores.empty()) return 0.0;
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(scores.size());
  double acc = 0.0;
  for (double s : scores) acc += (s - mean) * (s - mean);
  return acc / static_cast<double>(scores.size());
}

/// Inverse standard normal CDF (Acklam's rational approximation with one
/// Halley refinement step).
inline double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ArgumentError("inverse_normal_cdf: p must lie in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01, -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double low = 0.02425;
  double x = 0.0;
  if (p < low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * 3.14159265358979323846) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

// value +/- z * sqrt(variance / T).
inline std::pair<double, double> confidence_interval(double value, double variance, std::size_t horizon,
                                                     double level = 0.95) {
  if (horizon == 0) throw ArgumentError("confidence interval needs T >= 1");
  if (variance < 0.0) throw ArgumentError("negative variance");
  if (!(level > 0.0 && level < 1.0)) throw ArgumentError("confidence level must lie in (0, 1)");
  const double z = level == 0.95 ? kZ95 : inverse_normal_cdf(0.5 + level / 2.0);
  const double half = z * std::sqrt(variance / static_cast<double>(horizon));
  return {value - half, value + half};
}

namespace detail {

inline void require_nonempty(const BanditLog& log) {
  if (log.empty()) throw StructuralError("estimators need a nonempty log");
}

inline void require_true_propensities(const BanditLog& log, EstimatorTag tag) {
  for (const LogRecord& r : log.records()) {
    if (!r.true_propensity) {
      throw CapabilityError(std::string(to_string(tag)) + " needs true propensities; record t=" +
                            std::to_string(r.t) + " has none");
    }
  }
}

inline void require_matching(const BanditLog& log, const EvaluationFunction& eval_fn) {
  if (eval_fn.num_actions() != log.num_actions()) throw StructuralError("evaluation function K differs from log K");
}

inline void require_horizon(const BanditLog& log, const NuisanceTrajectory& traj) {
  if (traj.horizon() != log.size()) throw StructuralError("trajectory horizon differs from log length");
}

// Mean of the scores, plug-in variance, and the 95% interval.
inline EstimateResult summarize(EstimatorTag tag, std::vector<double> scores) {
  EstimateResult result;
  result.tag = tag;
  double mean = 0.0;
  for (double s : scores) mean += s;
  result.value = mean / static_cast<double>(scores.size());
  result.variance = plugin_variance(scores);
  std::tie(result.ci_low, result.ci_high) = confidence_interval(result.value, result.variance, scores.size());
  result.scores = std::move(scores);
  return result;
}

enum class PropensitySource { Truth, Trajectory };

inline std::vector<double> dr_scores(const BanditLog& log, const NuisanceTrajectory* traj,
                                     const EvaluationFunction& eval_fn, PropensitySource source, bool use_outcome) {
  const auto k = static_cast<Eigen::Index>(log.num_actions());
  std::vector<double> scores;
  scores.reserve(log.size());
  for (const LogRecord& rec : log.records()) {
    const NuisanceTrajectory::Entry* entry = traj ? &traj->resolve(rec.t) : nullptr;
    Vector propensity = source == PropensitySource::Truth ? *rec.true_propensity : entry->propensity->predict(rec);
    Vector outcome = use_outcome ? entry->outcome->predict_all(rec.x) : Vector::Zero(k);
    scores.push_back(score_term({rec, std::move(propensity), std::move(outcome), eval_fn.weights(rec.x)}));
  }
  return scores;
}

}  // namespace detail

/// (1/T) sum_t sum_a pi^e(a|X_t) f_hat_T(a, X_t) with f_hat_T fit on the whole log.
inline EstimateResult dm_estimate(const BanditLog& log, const OutcomeModel& outcome_full,
                                  const EvaluationFunction& eval_fn) {
  detail::require_nonempty(log);
  detail::require_matching(log, eval_fn);
  std::vector<double> scores;
  scores.reserve(log.size());
  for (const LogRecord& rec : log.records()) {
    scores.push_back(eval_fn.weights(rec.x).dot(outcome_full.predict_all(rec.x)));
  }
  return detail::summarize(EstimatorTag::DM, std::move(scores));
}

// IPW with the logged propensities.
inline EstimateResult adaipw_estimate(const BanditLog& log, const EvaluationFunction& eval_fn) {
  detail::require_nonempty(log);
  detail::require_matching(log, eval_fn);
  detail::require_true_propensities(log, EstimatorTag::AdaIPW);
  return detail::summarize(EstimatorTag::AdaIPW,
                           detail::dr_scores(log, nullptr, eval_fn, detail::PropensitySource::Truth, false));
}

// IPW with the step-wise estimated propensity g_hat_{t-1}.
inline EstimateResult eipw_estimate(const BanditLog& log, const NuisanceTrajectory& traj,
                                    const EvaluationFunction& eval_fn) {
  detail::require_nonempty(log);
  detail::require_matching(log, eval_fn);
  detail::require_horizon(log, traj);
  return detail::summarize(EstimatorTag::EIPW,
                           detail::dr_scores(log, &traj, eval_fn, detail::PropensitySource::Trajectory, false));
}

// Logged propensities with the step-wise outcome model f_hat_{t-1}.
inline EstimateResult aipw_estimate(const BanditLog& log, const NuisanceTrajectory& traj,
                                    const EvaluationFunction& eval_fn) {
  detail::require_nonempty(log);
  detail::require_matching(log, eval_fn);
  detail::require_horizon(log, traj);
  detail::require_true_propensities(log, EstimatorTag::AIPW);
  return detail::summarize(EstimatorTag::AIPW,
                           detail::dr_scores(log, &traj, eval_fn, detail::PropensitySource::Truth, true));
}

/// Adaptive doubly robust estimate: both nuisances come from the trajectory,
/// which must satisfy the only-past constraint. No true propensities needed.
inline EstimateResult adr_estimate(const BanditLog& log, const NuisanceTrajectory& traj,
                                   const EvaluationFunction& eval_fn) {
  detail::require_nonempty(log);
  detail::require_matching(log, eval_fn);
  detail::require_horizon(log, traj);
  traj.require_only_past();
  return detail::summarize(EstimatorTag::ADR,
                           detail::dr_scores(log, &traj, eval_fn, detail::PropensitySource::Trajectory, true));
}

/// AIPW scores reweighted by h_t = sqrt(pi_{t-1}(A_t | X_t)):
/// value = sum h_t phi_t / sum h_t.
///
/// The variance is T sum h_t^2 (phi_t - value)^2 / (sum h_t)^2, which is the
/// plug-in variance when all h_t are equal.
inline EstimateResult awaipw_estimate(const BanditLog& log, const NuisanceTrajectory& traj,
                                      const EvaluationFunction& eval_fn) {
  detail::require_nonempty(log);
  detail::require_matching(log, eval_fn);
  detail::require_horizon(log, traj);
  detail::require_true_propensities(log, EstimatorTag::AWAIPW);
  std::vector<double> scores = detail::dr_scores(log, &traj, eval_fn, detail::PropensitySource::Truth, true);

  std::vector<double> h(scores.size());
  double h_total = 0.0;
  double weighted = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const LogRecord& rec = log[i];
    h[i] = std::sqrt((*rec.true_propensity)(static_cast<Eigen::Index>(rec.action)));
    h_total += h[i];
    weighted += h[i] * scores[i];
  }
  if (!(h_total > 0.0)) throw DivisionHazardError("AW-AIPW weights sum to zero");

  EstimateResult result;
  result.tag = EstimatorTag::AWAIPW;
  result.value = weighted / h_total;
  double spread = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double dev = h[i] * (scores[i] - result.value);
    spread += dev * dev;
  }
  result.variance = static_cast<double>(scores.size()) * spread / (h_total * h_total);
  std::tie(result.ci_low, result.ci_high) = confidence_interval(result.value, result.variance, scores.size());
  result.scores = std::move(scores);
  return result;
}

}  // namespace opve
