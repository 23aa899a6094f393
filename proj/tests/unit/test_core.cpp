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

PotentialOutcomeDataset classification_data(Rng& rng, std::size_t n, std::size_t k, std::vector<std::size_t>& labels) {
  PotentialOutcomeDataset data{Matrix(static_cast<Eigen::Index>(n), 2), Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k))};
  labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    data.covariates(static_cast<Eigen::Index>(i), 0) = static_cast<double>(i);
    data.covariates(static_cast<Eigen::Index>(i), 1) = rng.normal();
    labels[i] = rng.below(k);
    data.outcomes(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(labels[i])) = 1.0;
  }
  return data;
}

}  // namespace

TEST(BanditLog, RejectsStructuralViolations) {
  BanditLog log(2, 1);
  log.append(vec({0.1}), 0, 1.0, vec({0.5, 0.5}));
  EXPECT_THROW(log.append(LogRecord{3, vec({0.1}), 0, 1.0, std::nullopt}), StructuralError);
  EXPECT_THROW(log.append(vec({0.1, 0.2}), 0, 1.0), StructuralError);
  EXPECT_THROW(log.append(vec({0.1}), 2, 1.0), StructuralError);
  EXPECT_THROW(log.append(vec({std::nan("")}), 0, 1.0), StructuralError);
  EXPECT_THROW(log.append(vec({0.1}), 0, 1.0, vec({0.5, 0.25, 0.25})), StructuralError);
  EXPECT_THROW(log.append(vec({0.1}), 0, 1.0, vec({1.5, -0.5})), StructuralError);
  EXPECT_EQ(log.size(), 1u);
  EXPECT_THROW(BanditLog(0, 1), StructuralError);
}

TEST(BanditLog, PrefixIsHistory) {
  Rng rng(1);
  const BanditLog log = fixtures::random_log(rng, 10);
  EXPECT_EQ(log.prefix(0).size(), 0u);
  EXPECT_EQ(log.prefix(4).size(), 4u);
  EXPECT_EQ(log.prefix(4)[3].t, 4u);
  EXPECT_THROW(log.prefix(11), StructuralError);
}

TEST(ValidateLog, UniformOverlapIsOk) {
  BanditLog log(2, 1);
  for (int i = 0; i < 5; ++i) log.append(vec({double(i)}), i % 2, 1.0, vec({0.5, 0.5}));
  const auto report = validate_log(log, EvaluationFunction::constant_action(2, 1));
  EXPECT_TRUE(report.ok);
  ASSERT_TRUE(report.max_ratio.has_value());
  EXPECT_LE(*report.max_ratio, 2.0);
}

TEST(ValidateLog, FlagsZeroPropensityWithTargetWeight) {
  BanditLog log(2, 1);
  log.append(vec({0.0}), 0, 1.0, vec({1.0, 0.0}));
  const auto eval = EvaluationFunction::from_function(EvaluationFunction::Kind::TabularSoftmaxModel, 2,
                                                      [](const Vector&) { return vec({0.7, 0.3}); });
  const auto report = validate_log(log, eval);
  EXPECT_FALSE(report.ok);
  ASSERT_EQ(report.overlap_violations.size(), 1u);
  EXPECT_EQ(report.overlap_violations[0].action, 1u);
  EXPECT_DOUBLE_EQ(report.overlap_violations[0].target_weight, 0.3);
}

TEST(ValidateLog, RatioBoundRewardBoundAndNormalization) {
  BanditLog log(2, 1);
  log.append(vec({0.0}), 0, 2.0, vec({0.2, 0.8}));
  log.append(vec({0.0}), 1, 1.0, vec({0.3, 0.6}));
  const auto report = validate_log(log, EvaluationFunction::uniform(2), 2.0);
  EXPECT_FALSE(report.ok);
  EXPECT_TRUE(report.ratio_exceeds_bound);  // 0.5 / 0.2 = 2.5
  EXPECT_DOUBLE_EQ(*report.max_ratio, 2.5);
  EXPECT_TRUE(report.reward_exceeds_bound);
  EXPECT_EQ(report.unnormalized_records, std::vector<std::size_t>{2});
}

TEST(ValidateLog, ErrorsAndPurity) {
  EXPECT_THROW(validate_log(BanditLog(2, 1), EvaluationFunction::uniform(2)), StructuralError);
  Rng rng(4);
  const BanditLog log = fixtures::random_log(rng, 50);
  EXPECT_THROW(validate_log(log, EvaluationFunction::uniform(2)), StructuralError);
  const auto eval = fixtures::random_policy(rng, 3, 2);
  const auto a = validate_log(log, eval, 30.0);
  const auto b = validate_log(log, eval, 30.0);
  EXPECT_EQ(a.ok, b.ok);
  EXPECT_EQ(*a.max_ratio, *b.max_ratio);
  EXPECT_EQ(a.max_abs_reward, b.max_abs_reward);
}

TEST(ValidateLog, MissingPropensitiesAreCounted) {
  BanditLog log(2, 1);
  log.append(vec({0.0}), 0, 1.0);
  const auto report = validate_log(log, EvaluationFunction::uniform(2));
  EXPECT_EQ(report.records_without_propensity, 1u);
  EXPECT_FALSE(report.max_ratio.has_value());
}

TEST(EvaluationFunction, ProbabilityKindsAreChecked) {
  const auto bad = EvaluationFunction::from_function(EvaluationFunction::Kind::TabularSoftmaxModel, 2,
                                                     [](const Vector&) { return vec({0.7, 0.7}); });
  EXPECT_THROW(bad.weights(vec({0.0})), ArgumentError);
  const auto contrast = EvaluationFunction::signed_contrast(vec({1.0, -1.0}));
  EXPECT_NO_THROW(contrast.weights(vec({0.0})));
  EXPECT_FALSE(contrast.is_probability());
  EXPECT_THROW(EvaluationFunction::constant_action(2, 2), ArgumentError);
  const auto wrong_k = EvaluationFunction::from_function(EvaluationFunction::Kind::SignedContrast, 3,
                                                         [](const Vector&) { return vec({1.0, 0.0}); });
  EXPECT_THROW(wrong_k.weights(vec({0.0})), StructuralError);
}

TEST(EvaluationFunction, SoftmaxBlend) {
  Matrix coef = Matrix::Zero(3, 2);
  coef(0, 0) = 50.0;
  const auto eval = EvaluationFunction::softmax_model(SoftmaxRegression(coef), 0.1);
  const Vector w = eval.weights(vec({1.0}));
  EXPECT_NEAR(w(0), 0.9 + 0.1 / 3, 1e-12);
  EXPECT_NEAR(w(1), 0.1 / 3, 1e-12);
  EXPECT_NEAR(w.sum(), 1.0, 1e-12);
}

TEST(PolicyValueOracle, PerfectAndUniformPolicies) {
  Rng rng(2);
  std::vector<std::size_t> labels;
  const auto data = classification_data(rng, 200, 4, labels);
  const auto perfect = EvaluationFunction::from_function(
      EvaluationFunction::Kind::TabularSoftmaxModel, 4, [&labels](const Vector& x) {
        Vector w = Vector::Zero(4);
        w(static_cast<Eigen::Index>(labels[static_cast<std::size_t>(x(0))])) = 1.0;
        return w;
      });
  EXPECT_DOUBLE_EQ(policy_value_oracle(data, perfect), 1.0);
  EXPECT_NEAR(policy_value_oracle(data, EvaluationFunction::uniform(4)), 0.25, 1e-12);
}

TEST(PolicyValueOracle, SignedContrastMatchesLoop) {
  Rng rng(8);
  std::vector<std::size_t> labels;
  const auto data = classification_data(rng, 300, 3, labels);
  double direct = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) direct += (labels[i] == 0) - (labels[i] == 1);
  direct /= static_cast<double>(labels.size());
  EXPECT_NEAR(policy_value_oracle(data, EvaluationFunction::signed_contrast(vec({1.0, -1.0, 0.0}))), direct, 1e-14);
}

TEST(PolicyValueOracle, LinearInEvaluationFunction) {
  Rng rng(13);
  for (int rep = 0; rep < 20; ++rep) {
    PotentialOutcomeDataset data{Matrix(50, 2), Matrix(50, 3)};
    for (auto& v : data.covariates.reshaped()) v = rng.normal();
    for (auto& v : data.outcomes.reshaped()) v = rng.uniform();
    const auto f = fixtures::random_policy(rng, 3, 2);
    const auto g = fixtures::random_policy(rng, 3, 2);
    const double alpha = rng.normal(), beta = rng.normal();
    const double combined = policy_value_oracle(data, EvaluationFunction::linear_combination(alpha, f, beta, g));
    EXPECT_NEAR(combined, alpha * policy_value_oracle(data, f) + beta * policy_value_oracle(data, g), 1e-12);
  }
}

TEST(EstimatorTag, NamesRoundTrip) {
  for (auto tag : {EstimatorTag::DM, EstimatorTag::AdaIPW, EstimatorTag::EIPW, EstimatorTag::AIPW,
                   EstimatorTag::AWAIPW, EstimatorTag::ADR, EstimatorTag::Batched}) {
    EXPECT_EQ(parse_estimator_tag(to_string(tag)), tag);
  }
  EXPECT_EQ(to_string(EstimatorTag::AdaIPW), "IPW");
  EXPECT_FALSE(parse_estimator_tag("XYZ").has_value());
  EXPECT_TRUE(needs_true_propensity(EstimatorTag::AIPW));
  EXPECT_FALSE(needs_true_propensity(EstimatorTag::ADR));
}
