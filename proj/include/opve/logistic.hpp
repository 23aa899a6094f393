#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "opve/error.hpp"

namespace opve {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Numerically stable softmax of a score vector.
inline Vector softmax(const Vector& scores) {
  const double top = scores.maxCoeff();
  Vector out = (scores.array() - top).exp().matrix();
  return out / out.sum();
}

/// Multinomial logistic regression model.
///
/// `coef` is K x (d + 1); the last column is the intercept.
class SoftmaxRegression {
 public:
  SoftmaxRegression() = default;
  explicit SoftmaxRegression(Matrix coef) : coef_(std::move(coef)) {}

  static SoftmaxRegression zeros(std::size_t num_classes, std::size_t dim) {
    return SoftmaxRegression(Matrix::Zero(static_cast<Eigen::Index>(num_classes),
                                          static_cast<Eigen::Index>(dim + 1)));
  }

  std::size_t num_classes() const { return static_cast<std::size_t>(coef_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(coef_.cols()) - 1; }
  const Matrix& coef() const { return coef_; }

  Vector scores(const Vector& x) const {
    const Eigen::Index d = coef_.cols() - 1;
    return coef_.leftCols(d) * x + coef_.col(d);
  }

  Vector predict_proba(const Vector& x) const { return softmax(scores(x)); }

  std::size_t predict(const Vector& x) const {
    Eigen::Index best = 0;
    scores(x).maxCoeff(&best);
    return static_cast<std::size_t>(best);
  }

 private:
  Matrix coef_;
};

struct GradientDescentOptions {
  int iterations = 500;
  double step = 0.1;
  double l2 = 1e-3;
};

/// Full-batch gradient descent on the mean cross-entropy plus (l2 / 2) * ||W||^2
/// (intercepts unpenalized). Deterministic for fixed inputs.
///
/// `features` is n x d (one row per sample); labels are 0-based class ids.
inline SoftmaxRegression fit_softmax_regression(const Matrix& features,
                                                std::span<const std::size_t> labels,
                                                std::size_t num_classes,
                                                const GradientDescentOptions& options = {},
                                                const SoftmaxRegression* warm_start = nullptr) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  const auto k = static_cast<Eigen::Index>(num_classes);
  if (static_cast<std::size_t>(n) != labels.size()) {
    throw StructuralError("softmax regression: feature rows and labels differ in length");
  }
  Matrix coef = Matrix::Zero(k, d + 1);
  if (warm_start != nullptr && warm_start->coef().rows() == k && warm_start->coef().cols() == d + 1) {
    coef = warm_start->coef();
  }
  if (n == 0) return SoftmaxRegression(std::move(coef));

  Matrix design(n, d + 1);
  design.leftCols(d) = features;
  design.col(d).setOnes();

  Matrix onehot = Matrix::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto label = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]);
    if (label >= k) throw ArgumentError("softmax regression: label out of range");
    onehot(i, label) = 1.0;
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix logits(n, k);
  Matrix grad(k, d + 1);
  for (int iter = 0; iter < options.iterations; ++iter) {
    logits.noalias() = design * coef.transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double top = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - top).exp();
      logits.row(i) /= logits.row(i).sum();
    }
    logits -= onehot;
    grad.noalias() = inv_n * logits.transpose() * design;
    grad.leftCols(d) += options.l2 * coef.leftCols(d);
    coef -= options.step * grad;
  }
  return SoftmaxRegression(std::move(coef));
}

}  // namespace opve
