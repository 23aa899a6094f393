#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "opve/core.hpp"
#include "opve/error.hpp"
#include "opve/kernel_ridge.hpp"
#include "opve/logistic.hpp"

namespace opve {

/// max(p_a, eps) followed by renormalization. The result sums to one and its
/// smallest entry is at least eps / (1 + K eps).
inline Vector clip_and_renormalize(const Vector& p, double eps) {
  const auto k = static_cast<double>(p.size());
  if (p.size() == 0) throw ArgumentError("clip_and_renormalize: empty vector");
  if (!(eps > 0.0) || eps > 1.0 / k) throw ArgumentError("clip floor must lie in (0, 1/K]");
  if ((p.array() < 0.0).any() || !p.allFinite()) throw ArgumentError("clip_and_renormalize: invalid entries");
  Vector out = p.cwiseMax(eps);
  return out / out.sum();
}

/// Step-wise outcome model f_hat(a, x), predictions clipped to [-C_f, C_f].
class OutcomeModel {
 public:
  // Per-action predictor: kernel ridge when the action had >= 2 samples, else a constant.
  struct ActionPredictor {
    std::optional<KernelRidge> ridge;
    double constant = 0.0;
    std::size_t train_size = 0;

    double predict(const Vector& x) const { return ridge ? ridge->predict(x) : constant; }
  };
  using ActionPtr = std::shared_ptr<const ActionPredictor>;
  using Function = std::function<double(std::size_t, const Vector&)>;

  OutcomeModel(std::vector<ActionPtr> actions, std::size_t fit_prefix_len, double bound)
      : actions_(std::move(actions)), fit_prefix_len_(fit_prefix_len), bound_(bound) {}

  static OutcomeModel constant(std::size_t num_actions, double value, std::size_t fit_prefix_len = 0,
                               double bound = 1.0) {
    auto shared = std::make_shared<const ActionPredictor>(ActionPredictor{std::nullopt, value, 0});
    return OutcomeModel(std::vector<ActionPtr>(num_actions, shared), fit_prefix_len, bound);
  }

  // Arbitrary f(a, x), e.g. the true conditional mean in simulations.
  static OutcomeModel from_function(std::size_t num_actions, Function fn, std::size_t fit_prefix_len = 0,
                                    double bound = 1.0) {
    OutcomeModel model({}, fit_prefix_len, bound);
    model.num_actions_override_ = num_actions;
    model.function_ = std::move(fn);
    return model;
  }

  std::size_t num_actions() const { return function_ ? num_actions_override_ : actions_.size(); }
  std::size_t fit_prefix_len() const { return fit_prefix_len_; }
  double bound() const { return bound_; }
  const std::vector<ActionPtr>& actions() const { return actions_; }

  double predict(std::size_t action, const Vector& x) const {
    const double raw = function_ ? function_(action, x) : actions_.at(action)->predict(x);
    return std::clamp(raw, -bound_, bound_);
  }

  Vector predict_all(const Vector& x) const {
    Vector out(static_cast<Eigen::Index>(num_actions()));
    for (std::size_t a = 0; a < num_actions(); ++a) out(static_cast<Eigen::Index>(a)) = predict(a, x);
    return out;
  }

 private:
  std::vector<ActionPtr> actions_;
  std::size_t fit_prefix_len_;
  double bound_;
  std::size_t num_actions_override_ = 0;
  Function function_;
};

/// Step-wise propensity model g_hat(. | x).
class PropensityModel {
 public:
  enum class Kind { Uniform, Logistic, LoggedTruth, Fixed };

  static PropensityModel uniform(std::size_t num_actions, std::size_t fit_prefix_len = 0) {
    PropensityModel m(Kind::Uniform, num_actions, fit_prefix_len);
    m.fixed_ = Vector::Constant(static_cast<Eigen::Index>(num_actions), 1.0 / static_cast<double>(num_actions));
    return m;
  }

  static PropensityModel logistic(SoftmaxRegression model, double eps, std::size_t fit_prefix_len) {
    PropensityModel m(Kind::Logistic, model.num_classes(), fit_prefix_len);
    m.model_ = std::move(model);
    m.eps_ = eps;
    return m;
  }

  // Reads pi_{t-1}(. | X_t) from the record itself; that vector is a function of Omega_{t-1}.
  static PropensityModel logged_truth(std::size_t num_actions) {
    return PropensityModel(Kind::LoggedTruth, num_actions, 0);
  }

  static PropensityModel fixed(Vector probabilities, std::size_t fit_prefix_len = 0) {
    PropensityModel m(Kind::Fixed, static_cast<std::size_t>(probabilities.size()), fit_prefix_len);
    m.fixed_ = std::move(probabilities);
    return m;
  }

  Kind kind() const { return kind_; }
  std::size_t num_actions() const { return num_actions_; }
  std::size_t fit_prefix_len() const { return fit_prefix_len_; }
  double clip_floor() const { return eps_; }
  const std::optional<SoftmaxRegression>& model() const { return model_; }

  Vector predict(const LogRecord& record) const {
    switch (kind_) {
      case Kind::Uniform:
      case Kind::Fixed:
        return fixed_;
      case Kind::Logistic:
        return clip_and_renormalize(model_->predict_proba(record.x), eps_);
      case Kind::LoggedTruth:
        if (!record.true_propensity) {
          throw CapabilityError("record t=" + std::to_string(record.t) + " carries no true propensity");
        }
        return *record.true_propensity;
    }
    return fixed_;
  }

 private:
  PropensityModel(Kind kind, std::size_t num_actions, std::size_t fit_prefix_len)
      : kind_(kind), num_actions_(num_actions), fit_prefix_len_(fit_prefix_len) {}

  Kind kind_;
  std::size_t num_actions_;
  std::size_t fit_prefix_len_;
  double eps_ = 0.0;
  std::optional<SoftmaxRegression> model_;
  Vector fixed_;
};

struct OutcomeFitOptions {
  HyperGrid grid;
  double reward_bound = 1.0;    // C_Y, also the prediction clip C_f
  std::size_t max_train = 500;  // most recent samples per action
  std::size_t folds = 5;
};

/// Constant used when an action has fewer than two samples: the prefix-wide
/// mean reward clipped to [0, C_Y], or C_Y / 2 for an empty prefix.
inline double outcome_fallback_constant(LogView prefix, double reward_bound) {
  if (prefix.empty()) return 0.5 * reward_bound;
  double total = 0.0;
  for (const LogRecord& r : prefix) total += r.reward;
  return std::clamp(total / static_cast<double>(prefix.size()), 0.0, reward_bound);
}

namespace detail {

// Indices (into the prefix) of the most recent `cap` records with action `a`, oldest first.
inline std::vector<std::size_t> recent_action_rows(LogView prefix, std::size_t action, std::size_t cap) {
  std::vector<std::size_t> rows;
  for (std::size_t i = prefix.size(); i-- > 0 && rows.size() < cap;) {
    if (prefix[i].action == action) rows.push_back(i);
  }
  std::reverse(rows.begin(), rows.end());
  return rows;
}

inline OutcomeModel::ActionPtr fit_action_predictor(LogView prefix, const std::vector<std::size_t>& rows,
                                                    double fallback, const OutcomeFitOptions& options,
                                                    const std::optional<KernelRidgeParams>& fixed_params,
                                                    KernelRidgeParams* selected) {
  if (rows.size() < 2) {
    return std::make_shared<const OutcomeModel::ActionPredictor>(
        OutcomeModel::ActionPredictor{std::nullopt, fallback, rows.size()});
  }
  Matrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(prefix.dim()));
  Vector y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = prefix[rows[i]].x.transpose();
    y(static_cast<Eigen::Index>(i)) = prefix[rows[i]].reward;
  }
  const KernelRidgeParams params = fixed_params ? *fixed_params : select_kernel_ridge_params(x, y, options.grid, options.folds);
  if (selected != nullptr) *selected = params;
  return std::make_shared<const OutcomeModel::ActionPredictor>(
      OutcomeModel::ActionPredictor{KernelRidge::fit(x, y, params), 0.0, rows.size()});
}

}  // namespace detail

/// One kernel ridge regressor per action on that action's (capped, most recent)
/// samples in the prefix, hyperparameters by cross-validation over the grid.
inline OutcomeModel fit_outcome(LogView prefix, const OutcomeFitOptions& options = {}) {
  const double fallback = outcome_fallback_constant(prefix, options.reward_bound);
  std::vector<OutcomeModel::ActionPtr> actions;
  for (std::size_t a = 0; a < prefix.num_actions(); ++a) {
    const auto rows = detail::recent_action_rows(prefix, a, options.max_train);
    actions.push_back(detail::fit_action_predictor(prefix, rows, fallback, options, std::nullopt, nullptr));
  }
  return OutcomeModel(std::move(actions), prefix.size(), options.reward_bound);
}

struct PropensityFitOptions {
  double eps = 0.05;
  GradientDescentOptions optimizer;
  // Iterations for refits that warm-start from the previous model.
  int warm_iterations = 500;
};

/// Multinomial logistic regression of actions on covariates, clipped at eps.
/// Empty and single-action prefixes give the uniform distribution.
inline PropensityModel fit_propensity(LogView prefix, const PropensityFitOptions& options = {},
                                      const SoftmaxRegression* warm_start = nullptr) {
  const std::size_t k = prefix.num_actions();
  if (!(options.eps > 0.0) || options.eps > 1.0 / static_cast<double>(k)) {
    throw ArgumentError("clip floor must lie in (0, 1/K]");
  }
  if (prefix.empty()) return PropensityModel::uniform(k, 0);
  const std::size_t first = prefix[0].action;
  const bool single_class = std::all_of(prefix.begin(), prefix.end(),
                                        [first](const LogRecord& r) { return r.action == first; });
  if (single_class) return PropensityModel::uniform(k, prefix.size());

  Matrix x(static_cast<Eigen::Index>(prefix.size()), static_cast<Eigen::Index>(prefix.dim()));
  std::vector<std::size_t> labels(prefix.size());
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = prefix[i].x.transpose();
    labels[i] = prefix[i].action;
  }
  GradientDescentOptions gd = options.optimizer;
  if (warm_start != nullptr) gd.iterations = options.warm_iterations;
  return PropensityModel::logistic(fit_softmax_regression(x, labels, k, gd, warm_start), options.eps,
                                   prefix.size());
}

/// When models are refit. Refit points are prefix lengths r; models fit on
/// records 1..r serve steps t > r until the next refit.
struct RefitSchedule {
  enum class Kind { EveryStep, FixedInterval, Geometric, Explicit };

  Kind kind = Kind::EveryStep;
  std::size_t interval = 25;
  double ratio = 1.5;
  std::vector<std::size_t> points;  // Explicit kind
  std::size_t warmup = 0;           // steps t <= warmup use fallback models

  static RefitSchedule every_step(std::size_t warmup = 0) { return {Kind::EveryStep, 1, 1.0, {}, warmup}; }
  static RefitSchedule fixed_interval(std::size_t interval, std::size_t warmup = 0) {
    if (interval == 0) throw ArgumentError("refit interval must be positive");
    return {Kind::FixedInterval, interval, 1.0, {}, warmup};
  }
  static RefitSchedule geometric(double ratio, std::size_t warmup = 0) {
    if (!(ratio > 1.0)) throw ArgumentError("geometric refit ratio must exceed 1");
    return {Kind::Geometric, 1, ratio, {}, warmup};
  }
  static RefitSchedule at_prefixes(std::vector<std::size_t> points, std::size_t warmup = 0) {
    return {Kind::Explicit, 1, 1.0, std::move(points), warmup};
  }
  // Every step up to T = 1000, every 25 steps beyond; warmup 2K.
  static RefitSchedule default_for(std::size_t horizon, std::size_t num_actions) {
    return horizon <= 1000 ? every_step(2 * num_actions) : fixed_interval(25, 2 * num_actions);
  }

  // Strictly increasing prefix lengths in [0, horizon), starting at 0.
  std::vector<std::size_t> refit_prefixes(std::size_t horizon) const {
    std::vector<std::size_t> out;
    if (horizon == 0) return out;
    switch (kind) {
      case Kind::EveryStep:
        for (std::size_t r = 0; r < horizon; ++r) out.push_back(r);
        break;
      case Kind::FixedInterval:
        for (std::size_t r = 0; r < horizon; r += interval) out.push_back(r);
        break;
      case Kind::Geometric: {
        out.push_back(0);
        std::size_t r = 1;
        while (r < horizon) {
          out.push_back(r);
          r = std::max(r + 1, static_cast<std::size_t>(std::ceil(static_cast<double>(r) * ratio)));
        }
        break;
      }
      case Kind::Explicit:
        out.push_back(0);
        for (std::size_t r : points) {
          if (r > out.back() && r < horizon) out.push_back(r);
        }
        break;
    }
    return out;
  }
};

/// Maps each step t in 1..T to the (f_hat, g_hat) pair used at t.
class NuisanceTrajectory {
 public:
  struct Entry {
    std::size_t first_step = 1;  // entry serves steps first_step..(next first_step - 1)
    std::shared_ptr<const OutcomeModel> outcome;
    std::shared_ptr<const PropensityModel> propensity;
  };

  NuisanceTrajectory(std::vector<Entry> entries, std::size_t horizon)
      : entries_(std::move(entries)), horizon_(horizon) {
    if (horizon_ > 0 && (entries_.empty() || entries_.front().first_step != 1)) {
      throw StructuralError("trajectory must cover step 1");
    }
    for (std::size_t i = 1; i < entries_.size(); ++i) {
      if (entries_[i].first_step <= entries_[i - 1].first_step) {
        throw StructuralError("trajectory entries must have strictly increasing first steps");
      }
    }
    for (const Entry& e : entries_) {
      if (!e.outcome || !e.propensity) throw StructuralError("trajectory entry missing a model");
    }
  }

  // Same pair at every step.
  static NuisanceTrajectory constant(std::size_t horizon, OutcomeModel outcome, PropensityModel propensity) {
    return NuisanceTrajectory({Entry{1, std::make_shared<const OutcomeModel>(std::move(outcome)),
                                     std::make_shared<const PropensityModel>(std::move(propensity))}},
                              horizon);
  }

  std::size_t horizon() const { return horizon_; }
  const std::vector<Entry>& entries() const { return entries_; }

  const Entry& resolve(std::size_t t) const {
    if (t < 1 || t > horizon_) throw StructuralError("step outside trajectory horizon");
    auto it = std::upper_bound(entries_.begin(), entries_.end(), t,
                               [](std::size_t step, const Entry& e) { return step < e.first_step; });
    return *std::prev(it);
  }

  // Both models used at step t were fit on at most t - 1 records.
  bool only_past() const {
    return std::all_of(entries_.begin(), entries_.end(), [](const Entry& e) {
      return e.outcome->fit_prefix_len() + 1 <= e.first_step && e.propensity->fit_prefix_len() + 1 <= e.first_step;
    });
  }

  void require_only_past() const {
    for (const Entry& e : entries_) {
      if (e.outcome->fit_prefix_len() + 1 > e.first_step || e.propensity->fit_prefix_len() + 1 > e.first_step) {
        throw ContractError("nuisance used at step " + std::to_string(e.first_step) +
                            " was fit on records beyond step " + std::to_string(e.first_step - 1));
      }
    }
  }

  // Copy with every propensity model replaced (keeps outcome models).
  NuisanceTrajectory with_propensity(PropensityModel propensity) const {
    auto shared = std::make_shared<const PropensityModel>(std::move(propensity));
    std::vector<Entry> out = entries_;
    for (Entry& e : out) e.propensity = shared;
    return NuisanceTrajectory(std::move(out), horizon_);
  }

  // Copy with every outcome model replaced (keeps propensity models).
  NuisanceTrajectory with_outcome(OutcomeModel outcome) const {
    auto shared = std::make_shared<const OutcomeModel>(std::move(outcome));
    std::vector<Entry> out = entries_;
    for (Entry& e : out) e.outcome = shared;
    return NuisanceTrajectory(std::move(out), horizon_);
  }

 private:
  std::vector<Entry> entries_;
  std::size_t horizon_;
};

struct NuisanceOptions {
  OutcomeFitOptions outcome;
  PropensityFitOptions propensity;
  // Kernel hyperparameters for an action are re-selected by cross-validation
  // once its training set has grown by this factor since the last selection;
  // other refits reuse the last selection. 1.0 re-selects at every refit.
  double reselect_growth = 1.0;
};

/// Adaptive fitting: at each refit point r, fit f_hat and g_hat on records
/// 1..r; they serve steps r+1 up to the next refit point. Steps t <= warmup
/// get the fallback constant outcome and the uniform propensity.
inline NuisanceTrajectory adaptive_fit(const BanditLog& log, const RefitSchedule& schedule,
                                       const NuisanceOptions& options = {}) {
  const std::size_t horizon = log.size();
  const std::size_t k = log.num_actions();
  std::vector<NuisanceTrajectory::Entry> entries;

  // Per-action cache: a predictor is reused while its training rows are unchanged.
  std::vector<OutcomeModel::ActionPtr> cached(k);
  std::vector<std::size_t> cached_count(k, 0);
  std::vector<double> cached_fallback(k, 0.0);
  std::vector<std::optional<KernelRidgeParams>> selected(k);
  std::vector<std::size_t> selected_at(k, 0);
  std::vector<std::size_t> action_count(k, 0);
  std::optional<SoftmaxRegression> last_logistic;
  std::size_t counted = 0;

  for (std::size_t r : schedule.refit_prefixes(horizon)) {
    const LogView prefix = log.prefix(r);
    for (; counted < r; ++counted) ++action_count[log[counted].action];
    const double fallback = outcome_fallback_constant(prefix, options.outcome.reward_bound);

    if (r + 1 <= schedule.warmup) {
      entries.push_back({r + 1,
                         std::make_shared<const OutcomeModel>(OutcomeModel::constant(k, fallback, r, options.outcome.reward_bound)),
                         std::make_shared<const PropensityModel>(PropensityModel::uniform(k, r))});
      continue;
    }

    std::vector<OutcomeModel::ActionPtr> actions(k);
    for (std::size_t a = 0; a < k; ++a) {
      const std::size_t n = std::min(action_count[a], options.outcome.max_train);
      // Constant predictors depend on the prefix-wide fallback, so refresh them when it moves.
      const bool stale = !cached[a] || cached_count[a] != action_count[a] ||
                         (n < 2 && cached_fallback[a] != fallback);
      if (stale) {
        const auto rows = detail::recent_action_rows(prefix, a, options.outcome.max_train);
        std::optional<KernelRidgeParams> reuse;
        if (selected[a] && static_cast<double>(n) < options.reselect_growth * static_cast<double>(selected_at[a])) {
          reuse = selected[a];
        }
        KernelRidgeParams chosen{};
        cached[a] = detail::fit_action_predictor(prefix, rows, fallback, options.outcome, reuse, &chosen);
        if (n >= 2 && !reuse) {
          selected[a] = chosen;
          selected_at[a] = n;
        }
        cached_count[a] = action_count[a];
        cached_fallback[a] = fallback;
      }
      actions[a] = cached[a];
    }
    auto outcome = std::make_shared<const OutcomeModel>(std::move(actions), r, options.outcome.reward_bound);

    PropensityModel propensity =
        fit_propensity(prefix, options.propensity, last_logistic ? &*last_logistic : nullptr);
    if (propensity.model()) last_logistic = propensity.model();
    entries.push_back({r + 1, std::move(outcome), std::make_shared<const PropensityModel>(std::move(propensity))});
  }
  return NuisanceTrajectory(std::move(entries), horizon);
}

}  // namespace opve
