#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "opve/bandit.hpp"
#include "opve/batched.hpp"
#include "opve/core.hpp"
#include "opve/dataio.hpp"
#include "opve/error.hpp"
#include "opve/estimators.hpp"
#include "opve/nuisance.hpp"
#include "opve/random.hpp"

namespace opve {

enum class Scenario { Synthetic, Benchmark, ExternalLog };

inline std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::Synthetic: return "synthetic";
    case Scenario::Benchmark: return "benchmark";
    case Scenario::ExternalLog: return "external-log";
  }
  return "?";
}

/// Evaluation function for external logs, which carry no fitted policy.
struct EvaluationSpec {
  enum class Kind { Uniform, ConstantAction, Contrast };
  Kind kind = Kind::Uniform;
  std::size_t action = 0;       // 0-based, ConstantAction
  std::vector<double> weights;  // Contrast

  EvaluationFunction build(std::size_t num_actions) const {
    switch (kind) {
      case Kind::Uniform:
        return EvaluationFunction::uniform(num_actions);
      case Kind::ConstantAction:
        return EvaluationFunction::constant_action(num_actions, action);
      case Kind::Contrast:
        if (weights.size() != num_actions) throw ConfigError("contrast weights must have K entries");
        return EvaluationFunction::signed_contrast(Eigen::Map<const Vector>(weights.data(), static_cast<Eigen::Index>(weights.size())));
    }
    return EvaluationFunction::uniform(num_actions);
  }
};

struct BatchSpec {
  std::size_t equal = 0;           // equal(M) when > 0
  std::vector<std::size_t> ends;   // explicit t_1..t_M otherwise

  BatchSchedule build(std::size_t horizon) const {
    return equal > 0 ? BatchSchedule::equal(equal, horizon) : BatchSchedule(ends);
  }
};

// Experiment-level nuisance settings. Bandwidths are sigma = 1/sqrt(2 gamma)
// for gamma in {0.01, 0.1, 1}. Hyperparameter re-selection and logistic
// warm starts are thinned so a 750-step trial refit at every step stays
// around a second.
inline NuisanceOptions experiment_nuisance_defaults() {
  NuisanceOptions n;
  n.outcome.grid.bandwidths = {std::sqrt(50.0), std::sqrt(5.0), std::sqrt(0.5)};
  n.propensity.warm_iterations = 20;
  n.reselect_growth = 1.25;
  return n;
}

inline LoggingPolicyConfig experiment_logging_defaults() {
  LoggingPolicyConfig l;
  l.mix_mode = MixMode::Floor;
  return l;
}

struct ExperimentConfig {
  Scenario scenario = Scenario::Synthetic;
  std::string data_file;                     // benchmark LIBSVM file or external log CSV
  std::optional<std::size_t> n_features;     // LIBSVM width override
  bool unit_range_scaling = true;
  bool has_bandit = true;                    // false for mab = "none"
  LoggingPolicyConfig logging = experiment_logging_defaults();
  std::size_t train_size = 1000;             // T1
  std::size_t truth_size = 100000;           // T2
  std::size_t log_size = 750;                // T3 / T
  std::size_t dim = 10;
  bool resample_truth = false;
  std::size_t trials = 100;
  std::vector<EstimatorTag> estimators{EstimatorTag::ADR, EstimatorTag::AdaIPW, EstimatorTag::AIPW,
                                       EstimatorTag::AWAIPW, EstimatorTag::DM, EstimatorTag::EIPW};
  NuisanceOptions nuisance = experiment_nuisance_defaults();
  std::optional<RefitSchedule> schedule;     // default_for(T, K) when unset
  std::optional<BatchSpec> batches;
  EvaluationSpec evaluation;                 // external-log only
  std::optional<double> r_true;              // external-log only
  std::uint64_t master_seed = 0;
  std::size_t workers = 1;

  RefitSchedule refit_schedule(std::size_t horizon, std::size_t num_actions) const {
    return schedule ? *schedule : RefitSchedule::default_for(horizon, num_actions);
  }
};

namespace detail {

template <typename T>
T json_get(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

inline BanditAlgorithm parse_algorithm(const std::string& name) {
  if (name == "LinUCB") return BanditAlgorithm::LinUCB;
  if (name == "LinTS") return BanditAlgorithm::LinTS;
  if (name == "Logistic") return BanditAlgorithm::Logistic;
  throw ConfigError("unknown mab '" + name + "'");
}

}  // namespace detail

/// Rejects impossible settings before any work is done.
inline void validate_config(const ExperimentConfig& cfg) {
  if (cfg.trials < 1) throw ConfigError("trials must be >= 1");
  if (cfg.estimators.empty()) throw ConfigError("estimator list is empty");
  if (cfg.workers < 1) throw ConfigError("workers must be >= 1");
  if (!(cfg.logging.alpha >= 0.0 && cfg.logging.alpha < 1.0)) throw ConfigError("alpha must lie in [0, 1)");
  if (!(cfg.nuisance.propensity.eps > 0.0)) throw ConfigError("clip floor eps must be positive");
  if (cfg.scenario != Scenario::ExternalLog && cfg.log_size < 1) throw ConfigError("log size must be >= 1");
  switch (cfg.scenario) {
    case Scenario::Synthetic:
      if (!cfg.has_bandit) throw ConfigError("synthetic scenario needs a bandit algorithm");
      if (cfg.logging.algorithm == BanditAlgorithm::Logistic) {
        throw ConfigError("synthetic scenario supports LinUCB or LinTS logging");
      }
      if (cfg.train_size < 2 || cfg.truth_size < 1) throw ConfigError("synthetic sizes T1 >= 2 and T2 >= 1 required");
      break;
    case Scenario::Benchmark:
      if (cfg.data_file.empty()) throw ConfigError("benchmark scenario needs data_file");
      if (!cfg.has_bandit) throw ConfigError("benchmark scenario needs a logging policy");
      break;
    case Scenario::ExternalLog:
      if (cfg.data_file.empty()) throw ConfigError("external-log scenario needs data_file");
      if (cfg.trials != 1) throw ConfigError("external-log scenario runs exactly one trial");
      break;
  }
  if (std::find(cfg.estimators.begin(), cfg.estimators.end(), EstimatorTag::Batched) != cfg.estimators.end() &&
      !cfg.batches) {
    throw ConfigError("BATCHED estimator needs a batch schedule");
  }
}

/// Reads the JSON config document. Unknown keys are rejected.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
  static const std::vector<std::string> known{
      "scenario", "data_file", "n_features", "scaling", "mab", "alpha", "mix_mode", "ucb_exploration", "ridge",
      "ts_prior_scale", "sizes", "dim", "resample_truth", "trials", "estimators", "nuisance", "batches",
      "evaluation", "r_true", "seed", "workers"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown config key '" + key + "'");
  }
  ExperimentConfig cfg;
  const std::string scenario = detail::json_get<std::string>(j, "scenario", "synthetic");
  if (scenario == "synthetic") {
    cfg.scenario = Scenario::Synthetic;
  } else if (scenario == "benchmark") {
    cfg.scenario = Scenario::Benchmark;
    cfg.trials = 10;
    cfg.log_size = 1000;
    cfg.estimators = {EstimatorTag::ADR, EstimatorTag::AdaIPW, EstimatorTag::AIPW, EstimatorTag::DM,
                      EstimatorTag::EIPW};
  } else if (scenario == "external-log") {
    cfg.scenario = Scenario::ExternalLog;
    cfg.trials = 1;
  } else {
    throw ConfigError("unknown scenario '" + scenario + "'");
  }
  cfg.data_file = detail::json_get<std::string>(j, "data_file", "");
  if (j.contains("n_features")) cfg.n_features = detail::json_get<std::size_t>(j, "n_features", 0);
  const std::string scaling = detail::json_get<std::string>(j, "scaling", "unit-range");
  if (scaling != "unit-range" && scaling != "none") throw ConfigError("scaling must be unit-range or none");
  cfg.unit_range_scaling = scaling == "unit-range";

  const std::string mab = detail::json_get<std::string>(j, "mab", cfg.scenario == Scenario::ExternalLog ? "none" : "LinTS");
  cfg.has_bandit = mab != "none";
  if (cfg.has_bandit) cfg.logging.algorithm = detail::parse_algorithm(mab);
  cfg.logging.alpha = detail::json_get<double>(j, "alpha", cfg.logging.alpha);
  const std::string mix = detail::json_get<std::string>(j, "mix_mode", "floor");
  if (mix == "uniform") {
    cfg.logging.mix_mode = MixMode::Uniform;
  } else if (mix == "floor") {
    cfg.logging.mix_mode = MixMode::Floor;
  } else {
    throw ConfigError("mix_mode must be uniform or floor");
  }
  cfg.logging.ucb_exploration = detail::json_get<double>(j, "ucb_exploration", cfg.logging.ucb_exploration);
  cfg.logging.ridge = detail::json_get<double>(j, "ridge", cfg.logging.ridge);
  cfg.logging.ts_prior_scale = detail::json_get<double>(j, "ts_prior_scale", cfg.logging.ts_prior_scale);

  if (j.contains("sizes")) {
    const auto& s = j.at("sizes");
    if (s.is_array()) {
      const auto v = s.get<std::vector<std::size_t>>();
      if (v.size() == 3) {
        cfg.train_size = v[0];
        cfg.truth_size = v[1];
        cfg.log_size = v[2];
      } else if (v.size() == 1) {
        cfg.log_size = v[0];
      } else {
        throw ConfigError("sizes must be [T] or [T1, T2, T3]");
      }
    } else if (s.is_number_unsigned()) {
      cfg.log_size = s.get<std::size_t>();
    } else {
      throw ConfigError("sizes must be a number or an array");
    }
  }
  cfg.dim = detail::json_get<std::size_t>(j, "dim", cfg.dim);
  cfg.resample_truth = detail::json_get<bool>(j, "resample_truth", false);
  if (j.contains("trials")) {
    const auto trials = detail::json_get<long long>(j, "trials", 1);
    if (trials < 1) throw ConfigError("trials must be >= 1");
    cfg.trials = static_cast<std::size_t>(trials);
  }
  if (j.contains("estimators")) {
    cfg.estimators.clear();
    for (const auto& name : detail::json_get<std::vector<std::string>>(j, "estimators", {})) {
      auto tag = parse_estimator_tag(name);
      if (!tag) throw ConfigError("unknown estimator '" + name + "'");
      if (std::find(cfg.estimators.begin(), cfg.estimators.end(), *tag) == cfg.estimators.end()) {
        cfg.estimators.push_back(*tag);
      }
    }
  }
  if (j.contains("nuisance")) {
    const auto& n = j.at("nuisance");
    auto& out = cfg.nuisance;
    out.outcome.grid.lambdas = detail::json_get<std::vector<double>>(n, "lambdas", out.outcome.grid.lambdas);
    out.outcome.grid.bandwidths = detail::json_get<std::vector<double>>(n, "bandwidths", out.outcome.grid.bandwidths);
    out.outcome.reward_bound = detail::json_get<double>(n, "reward_bound", out.outcome.reward_bound);
    out.outcome.max_train = detail::json_get<std::size_t>(n, "max_train", out.outcome.max_train);
    out.propensity.eps = detail::json_get<double>(n, "eps", out.propensity.eps);
    out.propensity.warm_iterations = detail::json_get<int>(n, "warm_iterations", out.propensity.warm_iterations);
    out.propensity.optimizer.iterations = detail::json_get<int>(n, "iterations", out.propensity.optimizer.iterations);
    out.propensity.optimizer.step = detail::json_get<double>(n, "step", out.propensity.optimizer.step);
    out.propensity.optimizer.l2 = detail::json_get<double>(n, "l2", out.propensity.optimizer.l2);
    out.reselect_growth = detail::json_get<double>(n, "reselect_growth", out.reselect_growth);
    if (n.contains("schedule")) {
      const auto& s = n.at("schedule");
      const std::string kind = detail::json_get<std::string>(s, "kind", "every-step");
      const std::size_t warmup = detail::json_get<std::size_t>(s, "warmup", 0);
      try {
        if (kind == "every-step") {
          cfg.schedule = RefitSchedule::every_step(warmup);
        } else if (kind == "fixed-interval") {
          cfg.schedule = RefitSchedule::fixed_interval(detail::json_get<std::size_t>(s, "interval", 25), warmup);
        } else if (kind == "geometric") {
          cfg.schedule = RefitSchedule::geometric(detail::json_get<double>(s, "ratio", 1.5), warmup);
        } else {
          throw ConfigError("unknown schedule kind '" + kind + "'");
        }
      } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
      }
    }
  }
  if (j.contains("batches")) {
    const auto& b = j.at("batches");
    BatchSpec spec;
    if (b.is_string()) {
      const std::string s = b.get<std::string>();
      unsigned m = 0;
      if (std::sscanf(s.c_str(), "equal(%u)", &m) != 1 || m == 0) throw ConfigError("batches must be \"equal(M)\" or a boundary list");
      spec.equal = m;
    } else if (b.is_array()) {
      spec.ends = b.get<std::vector<std::size_t>>();
    } else {
      throw ConfigError("batches must be \"equal(M)\" or a boundary list");
    }
    cfg.batches = spec;
  }
  if (j.contains("evaluation")) {
    const auto& e = j.at("evaluation");
    const std::string kind = detail::json_get<std::string>(e, "kind", "uniform");
    if (kind == "uniform") {
      cfg.evaluation.kind = EvaluationSpec::Kind::Uniform;
    } else if (kind == "constant-action") {
      cfg.evaluation.kind = EvaluationSpec::Kind::ConstantAction;
      const auto action = detail::json_get<std::size_t>(e, "action", 1);
      if (action == 0) throw ConfigError("evaluation action ids are 1-based");
      cfg.evaluation.action = action - 1;
    } else if (kind == "contrast") {
      cfg.evaluation.kind = EvaluationSpec::Kind::Contrast;
      cfg.evaluation.weights = detail::json_get<std::vector<double>>(e, "weights", {});
    } else {
      throw ConfigError("unknown evaluation kind '" + kind + "'");
    }
  }
  if (j.contains("r_true")) cfg.r_true = detail::json_get<double>(j, "r_true", 0.0);
  cfg.master_seed = detail::json_get<std::uint64_t>(j, "seed", 0);
  cfg.workers = detail::json_get<std::size_t>(j, "workers", 1);
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg = parse_config(j);
  // Relative data paths are taken relative to the config file.
  if (!cfg.data_file.empty() && std::filesystem::path(cfg.data_file).is_relative()) {
    cfg.data_file = (std::filesystem::path(path).parent_path() / cfg.data_file).string();
  }
  return cfg;
}

// Canonical JSON echo of the effective configuration (recorded in manifests).
inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["scenario"] = std::string(to_string(cfg.scenario));
  j["data_file"] = cfg.data_file;
  if (cfg.n_features) j["n_features"] = *cfg.n_features;
  j["scaling"] = cfg.unit_range_scaling ? "unit-range" : "none";
  j["mab"] = cfg.has_bandit ? std::string(to_string(cfg.logging.algorithm)) : "none";
  j["alpha"] = cfg.logging.alpha;
  j["mix_mode"] = cfg.logging.mix_mode == MixMode::Uniform ? "uniform" : "floor";
  j["ucb_exploration"] = cfg.logging.ucb_exploration;
  j["ridge"] = cfg.logging.ridge;
  j["ts_prior_scale"] = cfg.logging.ts_prior_scale;
  j["sizes"] = {cfg.train_size, cfg.truth_size, cfg.log_size};
  j["dim"] = cfg.dim;
  j["resample_truth"] = cfg.resample_truth;
  j["trials"] = cfg.trials;
  std::vector<std::string> names;
  for (auto tag : cfg.estimators) names.emplace_back(to_string(tag));
  j["estimators"] = names;
  const auto& n = cfg.nuisance;
  j["nuisance"] = {{"lambdas", n.outcome.grid.lambdas},
                   {"bandwidths", n.outcome.grid.bandwidths},
                   {"reward_bound", n.outcome.reward_bound},
                   {"max_train", n.outcome.max_train},
                   {"eps", n.propensity.eps},
                   {"iterations", n.propensity.optimizer.iterations},
                   {"warm_iterations", n.propensity.warm_iterations},
                   {"step", n.propensity.optimizer.step},
                   {"l2", n.propensity.optimizer.l2},
                   {"reselect_growth", n.reselect_growth}};
  if (cfg.schedule) {
    const auto& s = *cfg.schedule;
    const char* kind = s.kind == RefitSchedule::Kind::EveryStep       ? "every-step"
                       : s.kind == RefitSchedule::Kind::FixedInterval ? "fixed-interval"
                       : s.kind == RefitSchedule::Kind::Geometric     ? "geometric"
                                                                      : "explicit";
    j["nuisance"]["schedule"] = {{"kind", kind}, {"interval", s.interval}, {"ratio", s.ratio}, {"warmup", s.warmup}};
  }
  if (cfg.batches) {
    if (cfg.batches->equal > 0) {
      j["batches"] = "equal(" + std::to_string(cfg.batches->equal) + ")";
    } else {
      j["batches"] = cfg.batches->ends;
    }
  }
  if (cfg.r_true) j["r_true"] = *cfg.r_true;
  j["seed"] = cfg.master_seed;
  return j;
}

// FNV-1a over the canonical config text (worker count excluded).
inline std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = config_to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// rmse = sqrt(mean e^2).
inline double metric_rmse(std::span<const double> errors) {
  if (errors.empty()) return 0.0;
  double acc = 0.0;
  for (double e : errors) acc += e * e;
  return std::sqrt(acc / static_cast<double>(errors.size()));
}

// Sample standard deviation (n - 1 divisor) of the squared errors.
inline double metric_sd(std::span<const double> errors) {
  if (errors.size() < 2) return 0.0;
  double mean = 0.0;
  for (double e : errors) mean += e * e;
  mean /= static_cast<double>(errors.size());
  double acc = 0.0;
  for (double e : errors) acc += (e * e - mean) * (e * e - mean);
  return std::sqrt(acc / static_cast<double>(errors.size() - 1));
}

inline double metric_cr(const std::vector<bool>& hits) {
  if (hits.empty()) return 0.0;
  return static_cast<double>(std::count(hits.begin(), hits.end(), true)) / static_cast<double>(hits.size());
}

struct TrialResult {
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  double r_true = 0.0;
  std::vector<EstimateResult> estimates;  // same order as cfg.estimators
};

/// Loaded once and shared read-only by every trial.
struct SharedData {
  std::optional<DenseDataset> benchmark;
  std::optional<BanditLog> external_log;
};

inline SharedData load_shared_data(const ExperimentConfig& cfg) {
  SharedData shared;
  if (cfg.scenario == Scenario::Benchmark) {
    std::ifstream in(cfg.data_file);
    if (!in) throw StructuralError("cannot open data file '" + cfg.data_file + "'");
    const LabeledDataset ds = parse_libsvm(in, cfg.n_features);
    if (ds.n_classes() < 2) throw StructuralError("benchmark dataset needs at least two classes");
    shared.benchmark = densify(ds, cfg.unit_range_scaling ? Scaling::UnitRange : Scaling::None);
  } else if (cfg.scenario == Scenario::ExternalLog) {
    std::ifstream in(cfg.data_file);
    if (!in) throw StructuralError("cannot open log file '" + cfg.data_file + "'");
    shared.external_log = read_log_csv(in);
    if (shared.external_log->empty()) throw StructuralError("external log is empty");
  }
  return shared;
}

struct GeneratedData {
  EvaluationFunction eval_fn;
  double r_true = 0.0;
  BanditLog log;
  std::optional<Vector> dgp_signs;
};

inline GeneratedData generate_trial_data(const ExperimentConfig& cfg, const SharedData& shared, Rng& rng) {
  switch (cfg.scenario) {
    case Scenario::Synthetic: {
      SyntheticConfig sc;
      sc.train_size = cfg.train_size;
      sc.truth_size = cfg.truth_size;
      sc.log_size = cfg.log_size;
      sc.dim = cfg.dim;
      sc.logging = cfg.logging;
      sc.resample_truth = cfg.resample_truth;
      auto ex = build_synthetic_experiment(sc, rng);
      return {std::move(ex.eval_fn), ex.r_true, std::move(ex.log), ex.dgp.signs()};
    }
    case Scenario::Benchmark: {
      BenchmarkConfig bc;
      bc.log_size = cfg.log_size;
      bc.logging = cfg.logging;
      auto ex = build_benchmark_experiment(shared.benchmark->data, shared.benchmark->labels, bc, rng);
      return {std::move(ex.eval_fn), ex.r_true, std::move(ex.log), std::nullopt};
    }
    case Scenario::ExternalLog: {
      const BanditLog& log = *shared.external_log;
      return {cfg.evaluation.build(log.num_actions()), cfg.r_true.value_or(0.0), log, std::nullopt};
    }
  }
  throw ConfigError("unknown scenario");
}

/// Every requested estimator on one log. Estimators share the data and the
/// adaptive-fit trajectory but are computed independently.
inline std::vector<EstimateResult> run_estimators(const ExperimentConfig& cfg, const BanditLog& log,
                                                  const EvaluationFunction& eval_fn) {
  const auto& tags = cfg.estimators;
  const bool needs_traj = std::any_of(tags.begin(), tags.end(), [](EstimatorTag t) {
    return t == EstimatorTag::ADR || t == EstimatorTag::AIPW || t == EstimatorTag::EIPW || t == EstimatorTag::AWAIPW;
  });
  std::optional<NuisanceTrajectory> traj;
  if (needs_traj) traj = adaptive_fit(log, cfg.refit_schedule(log.size(), log.num_actions()), cfg.nuisance);

  std::vector<EstimateResult> out;
  for (EstimatorTag tag : tags) {
    switch (tag) {
      case EstimatorTag::DM:
        out.push_back(dm_estimate(log, fit_outcome(log.view(), cfg.nuisance.outcome), eval_fn));
        break;
      case EstimatorTag::AdaIPW:
        out.push_back(adaipw_estimate(log, eval_fn));
        break;
      case EstimatorTag::EIPW:
        out.push_back(eipw_estimate(log, *traj, eval_fn));
        break;
      case EstimatorTag::AIPW:
        out.push_back(aipw_estimate(log, *traj, eval_fn));
        break;
      case EstimatorTag::AWAIPW:
        out.push_back(awaipw_estimate(log, *traj, eval_fn));
        break;
      case EstimatorTag::ADR:
        out.push_back(adr_estimate(log, *traj, eval_fn));
        break;
      case EstimatorTag::Batched: {
        // Batched ADR: g_hat refit at batch starts, f_hat step-wise, efficient weights.
        const BatchSchedule batches = cfg.batches->build(log.size());
        NuisanceOptions opts = cfg.nuisance;
        const NuisanceTrajectory batch_traj = adaptive_fit(log, batches.refit_schedule(), opts);
        const BatchMoments moments = batch_means(log, batches, batch_traj, eval_fn, BatchPropensity::Estimated);
        Vector psi = moments.variances.cwiseMax(1e-12);
        out.push_back(gmm_estimate(moments, efficient_weights(psi)));
        break;
      }
    }
  }
  return out;
}

inline TrialResult run_trial(const ExperimentConfig& cfg, const SharedData& shared, std::size_t trial) {
  TrialResult result;
  result.trial = trial;
  result.seed = derive_seed(cfg.master_seed, trial);
  Rng rng(result.seed);
  GeneratedData data = generate_trial_data(cfg, shared, rng);
  for (EstimatorTag tag : cfg.estimators) {
    if (needs_true_propensity(tag) && !data.log.has_true_propensities()) {
      throw CapabilityError(std::string(to_string(tag)) + " requested but the log lacks true propensities");
    }
  }
  result.r_true = data.r_true;
  result.estimates = run_estimators(cfg, data.log, data.eval_fn);
  return result;
}

struct EstimatorSummary {
  EstimatorTag tag = EstimatorTag::ADR;
  double rmse = 0.0;
  double sd = 0.0;
  double cr = 0.0;
  std::vector<double> errors;  // R_true - R_hat per trial
  std::vector<bool> hits;
};

struct ExperimentReport {
  std::vector<EstimatorSummary> summaries;
  std::vector<TrialResult> trials;  // sorted by trial index
  double mean_r_true = 0.0;
  double runtime_seconds = 0.0;
  nlohmann::json manifest;
};

inline ExperimentReport aggregate(const ExperimentConfig& cfg, std::vector<TrialResult> trials) {
  std::sort(trials.begin(), trials.end(), [](const TrialResult& a, const TrialResult& b) { return a.trial < b.trial; });
  ExperimentReport report;
  for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
    EstimatorSummary s;
    s.tag = cfg.estimators[e];
    for (const TrialResult& t : trials) {
      const EstimateResult& est = t.estimates[e];
      s.errors.push_back(t.r_true - est.value);
      s.hits.push_back(est.covers(t.r_true));
    }
    s.rmse = metric_rmse(s.errors);
    s.sd = metric_sd(s.errors);
    s.cr = metric_cr(s.hits);
    report.summaries.push_back(std::move(s));
  }
  double total = 0.0;
  for (const TrialResult& t : trials) total += t.r_true;
  report.mean_r_true = trials.empty() ? 0.0 : total / static_cast<double>(trials.size());
  report.trials = std::move(trials);
  return report;
}

/// Runs cfg.trials seeded trials over cfg.workers threads. Aggregation is by
/// trial index, so the worker count does not affect any reported number.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  validate_config(cfg);
  const auto start = std::chrono::steady_clock::now();
  const SharedData shared = load_shared_data(cfg);

  std::vector<TrialResult> results(cfg.trials);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cfg.trials; i = next++) {
      try {
        results[i] = run_trial(cfg, shared, i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = cfg.trials;
      }
    }
  };
  const std::size_t n_workers = std::min(cfg.workers, cfg.trials);
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  ExperimentReport report = aggregate(cfg, std::move(results));
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  nlohmann::json manifest;
  manifest["config"] = config_to_json(cfg);
  manifest["config_hash"] = config_hash(cfg);
  manifest["master_seed"] = cfg.master_seed;
  manifest["variance_estimator"] = "per-estimator plug-in score variance";
  nlohmann::json trials = nlohmann::json::array();
  for (const TrialResult& t : report.trials) {
    trials.push_back({{"trial", t.trial}, {"seed", t.seed}, {"r_true", t.r_true}});
  }
  manifest["trials"] = trials;
  manifest["runtime_seconds"] = report.runtime_seconds;
  manifest["workers"] = cfg.workers;
  report.manifest = std::move(manifest);
  return report;
}

enum class ReportFormat { Table, Csv };

inline std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

/// Columns: estimator, RMSE, SD, CR. Both formats print the same strings.
inline std::string emit_report(const ExperimentReport& report, ReportFormat format) {
  std::ostringstream out;
  if (format == ReportFormat::Csv) {
    out << "estimator,rmse,sd,cr\n";
    for (const auto& s : report.summaries) {
      out << to_string(s.tag) << ',' << format_metric(s.rmse) << ',' << format_metric(s.sd) << ','
          << format_metric(s.cr) << '\n';
    }
  } else {
    char line[128];
    std::snprintf(line, sizeof(line), "%-10s %12s %12s %12s\n", "estimator", "RMSE", "SD", "CR");
    out << line;
    for (const auto& s : report.summaries) {
      std::snprintf(line, sizeof(line), "%-10s %12s %12s %12s\n", std::string(to_string(s.tag)).c_str(),
                    format_metric(s.rmse).c_str(), format_metric(s.sd).c_str(), format_metric(s.cr).c_str());
      out << line;
    }
  }
  return out.str();
}

}  // namespace opve
