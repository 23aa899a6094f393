#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "opve/error.hpp"
#include "opve/logistic.hpp"

namespace opve {

struct KernelRidgeParams {
  double lambda = 0.1;     // ridge penalty added to the kernel diagonal
  double bandwidth = 1.0;  // sigma in exp(-||x - x'||^2 / (2 sigma^2))
};

inline double gaussian_kernel(const Vector& a, const Vector& b, double bandwidth) {
  return std::exp(-(a - b).squaredNorm() / (2.0 * bandwidth * bandwidth));
}

// Gram matrix over the rows of `x`.
inline Matrix gaussian_gram(const Matrix& x, double bandwidth) {
  const Eigen::Index n = x.rows();
  const Vector norms = x.rowwise().squaredNorm();
  Matrix sq = (-2.0 * x * x.transpose()).colwise() + norms;
  sq.rowwise() += norms.transpose();
  const double scale = -1.0 / (2.0 * bandwidth * bandwidth);
  Matrix gram(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) gram(i, j) = std::exp(scale * std::max(0.0, sq(i, j)));
    gram(j, j) = 1.0;
  }
  return gram;
}

/// Gaussian-kernel ridge regression on mean-centered targets:
/// f(x) = mean(y) + k(x)^T (K + lambda I)^{-1} (y - mean(y)).
///
/// Centering makes large penalties shrink toward the target mean rather than 0.
class KernelRidge {
 public:
  KernelRidge() = default;

  static KernelRidge fit(const Matrix& x, const Vector& y, KernelRidgeParams params) {
    return fit_with_gram(x, y, gaussian_gram(x, params.bandwidth), params);
  }

  // Reuses a precomputed Gram matrix of `x` at params.bandwidth.
  static KernelRidge fit_with_gram(const Matrix& x, const Vector& y, const Matrix& gram, KernelRidgeParams params) {
    if (x.rows() != y.size()) throw StructuralError("kernel ridge: covariates and targets differ in length");
    if (x.rows() == 0) throw StructuralError("kernel ridge: empty training set");
    if (params.lambda <= 0.0 || params.bandwidth <= 0.0) throw ArgumentError("kernel ridge: nonpositive hyperparameter");
    KernelRidge model;
    model.params_ = params;
    model.train_x_ = x;
    model.offset_ = y.mean();
    Matrix system = gram;
    system.diagonal().array() += params.lambda;
    const Vector centered = y.array() - model.offset_;
    Eigen::LLT<Matrix> llt(system);
    if (llt.info() == Eigen::Success) {
      model.dual_ = llt.solve(centered);
    } else {
      model.dual_ = system.ldlt().solve(centered);
    }
    return model;
  }

  double predict(const Vector& x) const {
    const double scale = -1.0 / (2.0 * params_.bandwidth * params_.bandwidth);
    const Vector sq = (train_x_.rowwise() - x.transpose()).rowwise().squaredNorm();
    return offset_ + dual_.dot((scale * sq.array()).exp().matrix());
  }

  const KernelRidgeParams& params() const { return params_; }
  std::size_t train_size() const { return static_cast<std::size_t>(train_x_.rows()); }
  double offset() const { return offset_; }

 private:
  KernelRidgeParams params_;
  Matrix train_x_;
  Vector dual_;
  double offset_ = 0.0;
};

struct HyperGrid {
  std::vector<double> lambdas{0.01, 0.1, 1.0};
  std::vector<double> bandwidths{0.01, 0.1, 1.0};
};

/// k-fold cross-validated squared error over the grid. Folds interleave rows
/// (row i goes to fold i mod k); k shrinks to n for tiny samples. Ties go to
/// the larger penalty, then the larger bandwidth.
inline KernelRidgeParams select_kernel_ridge_params(const Matrix& x, const Vector& y, const HyperGrid& grid,
                                                    std::size_t folds = 5) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (grid.lambdas.empty() || grid.bandwidths.empty()) throw ArgumentError("empty hyperparameter grid");
  std::vector<double> lambdas = grid.lambdas;
  std::vector<double> bandwidths = grid.bandwidths;
  std::sort(lambdas.rbegin(), lambdas.rend());
  std::sort(bandwidths.rbegin(), bandwidths.rend());
  KernelRidgeParams best{lambdas.front(), bandwidths.front()};
  if (n < 2) return best;

  const std::size_t k = std::min(folds, n);
  std::vector<std::vector<Eigen::Index>> train_idx(k), test_idx(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < k; ++f) {
      (i % k == f ? test_idx[f] : train_idx[f]).push_back(static_cast<Eigen::Index>(i));
    }
  }

  double best_err = std::numeric_limits<double>::infinity();
  std::vector<double> errors(lambdas.size() * bandwidths.size(), 0.0);
  for (std::size_t b = 0; b < bandwidths.size(); ++b) {
    const Matrix gram = gaussian_gram(x, bandwidths[b]);
    for (std::size_t f = 0; f < k; ++f) {
      const auto& tr = train_idx[f];
      const auto& te = test_idx[f];
      const Matrix k_train = gram(tr, tr);
      const Matrix k_cross = gram(te, tr);
      const Vector y_train = y(tr);
      const double offset = y_train.mean();
      const Vector centered = y_train.array() - offset;
      for (std::size_t l = 0; l < lambdas.size(); ++l) {
        Matrix system = k_train;
        system.diagonal().array() += lambdas[l];
        const Vector dual = system.llt().solve(centered);
        const Vector pred = (k_cross * dual).array() + offset;
        errors[l * bandwidths.size() + b] += (pred - y(te)).squaredNorm();
      }
    }
  }
  for (std::size_t l = 0; l < lambdas.size(); ++l) {
    for (std::size_t b = 0; b < bandwidths.size(); ++b) {
      const double err = errors[l * bandwidths.size() + b];
      if (err < best_err - 1e-12 * std::max(1.0, best_err)) {
        best_err = err;
        best = {lambdas[l], bandwidths[b]};
      }
    }
  }
  return best;
}

}  // namespace opve
