#include <gtest/gtest.h>

#include "opve/logistic.hpp"
#include "opve/random.hpp"

using namespace opve;

namespace {

double mean_cross_entropy(const SoftmaxRegression& model, const Matrix& x, const std::vector<std::size_t>& labels) {
  double loss = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    loss -= std::log(model.predict_proba(x.row(i).transpose())(static_cast<Eigen::Index>(labels[i])));
  }
  return loss / static_cast<double>(x.rows());
}

}  // namespace

TEST(Softmax, StableAndNormalized) {
  Vector s(3);
  s << 1000.0, 999.0, -1000.0;
  const Vector p = softmax(s);
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p.sum(), 1.0, 1e-15);
  EXPECT_NEAR(p(0) / p(1), std::exp(1.0), 1e-9);
}

TEST(SoftmaxRegression, ZeroModelIsUniform) {
  const auto model = SoftmaxRegression::zeros(4, 3);
  const Vector p = model.predict_proba(Vector::Ones(3));
  for (Eigen::Index a = 0; a < 4; ++a) EXPECT_DOUBLE_EQ(p(a), 0.25);
  EXPECT_EQ(model.predict(Vector::Ones(3)), 0u);
}

TEST(SoftmaxRegression, GradientDescentLowersLossAndSeparates) {
  Rng rng(21);
  const int n = 300;
  Matrix x(n, 2);
  std::vector<std::size_t> labels(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
    labels[i] = x(i, 0) > 0.5 ? 2 : (x(i, 1) > 0 ? 1 : 0);
  }
  const auto start = SoftmaxRegression::zeros(3, 2);
  const auto fitted = fit_softmax_regression(x, labels, 3);
  EXPECT_LT(mean_cross_entropy(fitted, x, labels), 0.6 * mean_cross_entropy(start, x, labels));
  int correct = 0;
  for (int i = 0; i < n; ++i) correct += fitted.predict(x.row(i).transpose()) == labels[i];
  EXPECT_GT(correct, 240);
}

TEST(SoftmaxRegression, InterceptCapturesClassBalance) {
  // x carries no signal; the intercept alone should match class frequencies.
  Rng rng(3);
  const int n = 400;
  Matrix x(n, 1);
  std::vector<std::size_t> labels(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.normal();
    labels[i] = i % 4 == 0 ? 0 : 1;
  }
  GradientDescentOptions opts;
  opts.iterations = 3000;
  opts.step = 0.5;
  const auto fitted = fit_softmax_regression(x, labels, 2, opts);
  EXPECT_NEAR(fitted.predict_proba(Vector::Zero(1))(0), 0.25, 0.02);
}

TEST(SoftmaxRegression, Deterministic) {
  Rng rng(4);
  Matrix x(50, 3);
  for (auto& v : x.reshaped()) v = rng.normal();
  std::vector<std::size_t> labels(50);
  for (auto& l : labels) l = rng.below(3);
  const auto a = fit_softmax_regression(x, labels, 3);
  const auto b = fit_softmax_regression(x, labels, 3);
  EXPECT_EQ(a.coef(), b.coef());
}

TEST(SoftmaxRegression, WarmStartContinuesOptimization) {
  Rng rng(6);
  Matrix x(80, 2);
  for (auto& v : x.reshaped()) v = rng.normal();
  std::vector<std::size_t> labels(80);
  for (int i = 0; i < 80; ++i) labels[i] = x(i, 0) + 0.3 * rng.normal() > 0 ? 1 : 0;
  GradientDescentOptions half;
  half.iterations = 250;
  const auto first = fit_softmax_regression(x, labels, 2, half);
  const auto resumed = fit_softmax_regression(x, labels, 2, half, &first);
  const auto full = fit_softmax_regression(x, labels, 2);
  EXPECT_LT((resumed.coef() - full.coef()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SoftmaxRegression, RejectsBadLabels) {
  Matrix x = Matrix::Zero(2, 1);
  std::vector<std::size_t> labels{0, 3};
  EXPECT_THROW(fit_softmax_regression(x, labels, 2), ArgumentError);
  std::vector<std::size_t> short_labels{0};
  EXPECT_THROW(fit_softmax_regression(x, short_labels, 2), StructuralError);
}
