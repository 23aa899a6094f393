#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "opve/core.hpp"
#include "opve/error.hpp"
#include "opve/estimators.hpp"
#include "opve/nuisance.hpp"

namespace opve {

/// Batch boundaries 0 = t_0 < t_1 < ... < t_M = T. Fractions r_tau are derived
/// from the boundaries so they always sum to one.
class BatchSchedule {
 public:
  // `ends` holds t_1..t_M.
  explicit BatchSchedule(std::vector<std::size_t> ends) : ends_(std::move(ends)) {
    if (ends_.empty()) throw ArgumentError("batch schedule needs at least one batch");
    std::size_t prev = 0;
    for (std::size_t e : ends_) {
      if (e <= prev) throw ArgumentError("batch boundaries must be strictly increasing and positive");
      prev = e;
    }
  }

  // M batches of (nearly) equal size; the first T mod M batches get one extra record.
  static BatchSchedule equal(std::size_t num_batches, std::size_t horizon) {
    if (num_batches == 0 || num_batches > horizon) throw ArgumentError("equal(M) needs 1 <= M <= T");
    std::vector<std::size_t> ends;
    std::size_t acc = 0;
    for (std::size_t m = 0; m < num_batches; ++m) {
      acc += horizon / num_batches + (m < horizon % num_batches ? 1 : 0);
      ends.push_back(acc);
    }
    return BatchSchedule(std::move(ends));
  }

  std::size_t num_batches() const { return ends_.size(); }
  std::size_t horizon() const { return ends_.back(); }
  std::size_t start(std::size_t tau) const { return tau == 0 ? 0 : ends_[tau - 1]; }  // t_{tau-1}, 0-based tau
  std::size_t end(std::size_t tau) const { return ends_[tau]; }
  std::size_t size(std::size_t tau) const { return end(tau) - start(tau); }
  double fraction(std::size_t tau) const {
    return static_cast<double>(size(tau)) / static_cast<double>(horizon());
  }
  const std::vector<std::size_t>& ends() const { return ends_; }

  // Refit at every batch start so batch tau's nuisances see records 1..t_{tau-1} only.
  RefitSchedule refit_schedule() const {
    std::vector<std::size_t> starts;
    for (std::size_t tau = 1; tau < ends_.size(); ++tau) starts.push_back(ends_[tau - 1]);
    return RefitSchedule::at_prefixes(std::move(starts));
  }

 private:
  std::vector<std::size_t> ends_;
};

/// Per-batch mean scores D, their plug-in variances, and the batch fractions.
struct BatchMoments {
  Vector means;                // D_tau
  Vector variances;            // Psi_hat_tau, within-batch score variance
  Vector fractions;            // r_tau
  std::vector<double> scores;  // phi_t for t = 1..T

  std::size_t num_batches() const { return static_cast<std::size_t>(means.size()); }
  std::size_t horizon() const { return scores.size(); }

  // q_hat_tau(R) = (1/T) sum_t h_t = D_tau - R.
  Vector centered(double value) const { return means.array() - value; }
};

enum class BatchPropensity { True, Estimated };

/// Per-batch means of the doubly robust score. With BatchPropensity::True the
/// logged policy is used; with Estimated, g_hat from the trajectory (the
/// batched ADR variant), which must be fit on records before the batch start.
inline BatchMoments batch_means(const BanditLog& log, const BatchSchedule& schedule, const NuisanceTrajectory& traj,
                                const EvaluationFunction& eval_fn, BatchPropensity source) {
  if (schedule.horizon() != log.size()) throw StructuralError("batch schedule does not match log length");
  if (traj.horizon() != log.size()) throw StructuralError("trajectory horizon differs from log length");
  if (eval_fn.num_actions() != log.num_actions()) throw StructuralError("evaluation function K differs from log K");
  if (source == BatchPropensity::True) detail::require_true_propensities(log, EstimatorTag::Batched);
  traj.require_only_past();

  const std::size_t m = schedule.num_batches();
  BatchMoments out;
  out.means = Vector::Zero(static_cast<Eigen::Index>(m));
  out.variances = Vector::Zero(static_cast<Eigen::Index>(m));
  out.fractions = Vector::Zero(static_cast<Eigen::Index>(m));
  out.scores.reserve(log.size());

  for (std::size_t tau = 0; tau < m; ++tau) {
    if (schedule.size(tau) == 0) throw StructuralError("empty batch");
    std::vector<double> batch;
    for (std::size_t i = schedule.start(tau); i < schedule.end(tau); ++i) {
      const LogRecord& rec = log[i];
      const auto& entry = traj.resolve(rec.t);
      Vector propensity;
      if (source == BatchPropensity::True) {
        propensity = *rec.true_propensity;
      } else {
        if (entry.propensity->fit_prefix_len() > schedule.start(tau)) {
          throw ContractError("batch " + std::to_string(tau + 1) + " propensity fit on records past t=" +
                              std::to_string(schedule.start(tau)));
        }
        propensity = entry.propensity->predict(rec);
      }
      batch.push_back(score_term({rec, std::move(propensity), entry.outcome->predict_all(rec.x), eval_fn.weights(rec.x)}));
    }
    double mean = 0.0;
    for (double s : batch) mean += s;
    mean /= static_cast<double>(batch.size());
    const auto idx = static_cast<Eigen::Index>(tau);
    out.means(idx) = mean;
    out.variances(idx) = plugin_variance(batch);
    out.fractions(idx) = schedule.fraction(tau);
    out.scores.insert(out.scores.end(), batch.begin(), batch.end());
  }
  return out;
}

inline void require_weight_vector(const Vector& w) {
  if (w.size() == 0) throw ArgumentError("empty weight vector");
  if (!w.allFinite() || (w.array() <= 0.0).any()) throw ArgumentError("weights must be positive");
  if (std::abs(w.sum() - 1.0) > 1e-12) throw ArgumentError("weights must sum to one");
}

inline Vector equal_weights(std::size_t num_batches) {
  return Vector::Constant(static_cast<Eigen::Index>(num_batches), 1.0 / static_cast<double>(num_batches));
}

/// w*_tau proportional to 1 / Psi_tau.
inline Vector efficient_weights(const Vector& batch_variances) {
  if (batch_variances.size() == 0) throw ArgumentError("no batch variances");
  if (!batch_variances.allFinite() || (batch_variances.array() <= 0.0).any()) {
    throw ArgumentError("efficient weights need positive batch variances");
  }
  const Vector inv = batch_variances.cwiseInverse();
  return inv / inv.sum();
}

// q_hat(R)^T diag(w) q_hat(R); minimized at R = w^T D.
inline double gmm_objective(const BatchMoments& moments, const Vector& w, double value) {
  const Vector q = moments.centered(value);
  return q.dot(w.cwiseProduct(q));
}

// sigma^2 = sum_tau w_tau Psi_tau, the asymptotic variance stated for the batched estimator.
inline double batched_weighted_variance(const Vector& w, const Vector& batch_variances) {
  return w.dot(batch_variances);
}

// sum_tau w_tau^2 Psi_tau / r_tau: variance of sqrt(T) w^T D with independent batch means.
inline double batched_delta_variance(const Vector& w, const Vector& batch_variances, const Vector& fractions) {
  return (w.array().square() * batch_variances.array() / fractions.array()).sum();
}

/// Closed-form GMM combination value = w^T D. The interval uses the stated
/// asymptotic variance sum_tau w_tau Psi_tau; batched_delta_variance gives the
/// alternative w_tau^2 Psi_tau / r_tau reading.
inline EstimateResult gmm_estimate(const BatchMoments& moments, const Vector& w) {
  require_weight_vector(w);
  if (static_cast<std::size_t>(w.size()) != moments.num_batches()) throw ArgumentError("weight length differs from M");
  EstimateResult result;
  result.tag = EstimatorTag::Batched;
  result.value = w.dot(moments.means);
  result.variance = batched_weighted_variance(w, moments.variances);
  std::tie(result.ci_low, result.ci_high) = confidence_interval(result.value, result.variance, moments.horizon());
  result.scores = moments.scores;
  return result;
}

}  // namespace opve
