#pragma once

// Unconstrained parameterization of correlation-matrix Cholesky factors and the
// LKJ density over them.
//
// Transform (row-major over the strict lower triangle): z = tanh(y) are
// canonical partial correlations; row i of L is built as
//   L[i][j] = z_ij sqrt(1 - sum_{k<j} L[i][k]^2),  L[i][i] = sqrt(1 - sum_{k<i} L[i][k]^2).

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "maidm/error.hpp"

namespace maidm::lkj {

constexpr std::size_t num_free(std::size_t dim) { return dim * (dim - 1) / 2; }

struct CorrCholesky {
  Eigen::MatrixXd lower;  ///< unit-row-norm lower-triangular factor
  double log_jacobian = 0.0;  ///< log |d(strict-lower L) / d y|
};

inline CorrCholesky corr_cholesky_from_unconstrained(std::span<const double> y, std::size_t dim) {
  if (y.size() != num_free(dim)) throw InvalidArgument("corr_cholesky: expected " + std::to_string(num_free(dim)) + " values");
  const auto n = static_cast<Eigen::Index>(dim);
  CorrCholesky out{Eigen::MatrixXd::Zero(n, n), 0.0};
  if (dim == 0) return out;
  out.lower(0, 0) = 1.0;
  std::size_t idx = 0;
  for (Eigen::Index i = 1; i < n; ++i) {
    double sum_sqs = 0.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double z = std::tanh(y[idx++]);
      out.log_jacobian += std::log1p(-z * z);  // d tanh
      const double remaining = 1.0 - sum_sqs;
      out.lower(i, j) = z * std::sqrt(remaining);
      out.log_jacobian += 0.5 * std::log(remaining);
      sum_sqs += out.lower(i, j) * out.lower(i, j);
    }
    out.lower(i, i) = std::sqrt(std::max(0.0, 1.0 - sum_sqs));
  }
  return out;
}

/// Inverse of corr_cholesky_from_unconstrained for a positive-definite
/// correlation matrix.
inline std::vector<double> unconstrained_from_corr(const Eigen::MatrixXd& corr) {
  const Eigen::Index n = corr.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(corr);
  if (llt.info() != Eigen::Success) throw InvalidArgument("unconstrained_from_corr: matrix not positive definite");
  const Eigen::MatrixXd l = llt.matrixL();
  std::vector<double> y;
  y.reserve(num_free(static_cast<std::size_t>(n)));
  for (Eigen::Index i = 1; i < n; ++i) {
    double sum_sqs = 0.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double z = l(i, j) / std::sqrt(1.0 - sum_sqs);
      y.push_back(std::atanh(z));
      sum_sqs += l(i, j) * l(i, j);
    }
  }
  return y;
}

/// log of the LKJ(eta) normalizing constant c_d: density(R) = det(R)^(eta-1) / c_d.
inline double log_normalizer(std::size_t dim, double eta) {
  const double d = static_cast<double>(dim);
  double out = 0.0;
  for (std::size_t k = 1; k < dim; ++k) {
    const double dk = d - static_cast<double>(k);
    const double b = eta + (dk - 1.0) / 2.0;
    const double log_beta = 2.0 * std::lgamma(b) - std::lgamma(2.0 * b);
    out += (2.0 * eta - 2.0 + dk) * dk * std::log(2.0) + dk * log_beta;
  }
  return out;
}

/// Normalized LKJ density of the correlation Cholesky factor with respect to
/// its strict lower triangle: sum_{i>=1} (d - i - 1 + 2 eta - 2) log L_ii - log c_d.
inline double corr_cholesky_logpdf(const Eigen::MatrixXd& lower, double eta) {
  if (!(eta > 0.0)) throw InvalidArgument("LKJ: eta must be > 0");
  const auto d = lower.rows();
  double lp = -log_normalizer(static_cast<std::size_t>(d), eta);
  for (Eigen::Index i = 1; i < d; ++i)
    lp += (static_cast<double>(d - i - 1) + 2.0 * eta - 2.0) * std::log(lower(i, i));
  return lp;
}

}  // namespace maidm::lkj
