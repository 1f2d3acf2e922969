#pragma once

// Squared-exponential Gaussian-process residual model: kernel, Gram matrix,
// dense covariance factorization with jitter escalation, multivariate normal
// log-density, whitening and path sampling.

#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "maidm/error.hpp"
#include "maidm/rng.hpp"

namespace maidm {

struct KernelHyper {
  double sigma_k = 0.2;  ///< output scale [m/s^2]
  double ell = 1.3;      ///< lengthscale [s]

  void validate() const {
    if (!(sigma_k > 0.0) || !(ell > 0.0) || !std::isfinite(sigma_k) || !std::isfinite(ell))
      throw InvalidArgument("KernelHyper: sigma_k and ell must be finite and > 0");
  }
};

struct NoiseScale {
  double sigma_eps = 0.1;  ///< i.i.d. acceleration noise sd [m/s^2]

  void validate() const {
    if (!(sigma_eps > 0.0) || !std::isfinite(sigma_eps))
      throw InvalidArgument("NoiseScale: sigma_eps must be finite and > 0");
  }
};

/// sigma_k^2 exp(-(t - t2)^2 / (2 ell^2)).
inline double se_kernel(double t, double t2, const KernelHyper& h) {
  const double d = (t - t2) / h.ell;
  return h.sigma_k * h.sigma_k * std::exp(-0.5 * d * d);
}

namespace detail {
inline void check_increasing(std::span<const double> times, const char* who) {
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1]))
      throw InvalidArgument(std::string(who) + ": timestamps must be strictly increasing (index " +
                            std::to_string(i) + ")");
  }
}
}  // namespace detail

/// Symmetric positive-definite matrix with its cached lower Cholesky factor.
/// Immutable once built; safe to share across threads.
class CovMatrix {
 public:
  static constexpr double kJitterStart = 1e-10;
  static constexpr double kJitterMax = 1e-6;

  /// Factorizes `m`. On failure adds kJitterStart*scale to the diagonal and
  /// escalates x10 up to kJitterMax*scale before giving up.
  static CovMatrix factorize(Eigen::MatrixXd m, double jitter_scale, bool always_jitter = false) {
    if (m.rows() != m.cols()) throw InvalidArgument("CovMatrix: matrix must be square");
    if (!(jitter_scale > 0.0)) jitter_scale = 1.0;
    double jitter = always_jitter ? kJitterStart * jitter_scale : 0.0;
    for (;;) {
      Eigen::MatrixXd work = m;
      if (jitter > 0.0) work.diagonal().array() += jitter;
      Eigen::LLT<Eigen::MatrixXd> llt(work);
      if (llt.info() == Eigen::Success && llt.matrixLLT().diagonal().minCoeff() > 0.0) {
        CovMatrix c;
        c.matrix_ = std::move(work);
        c.lower_ = llt.matrixL();
        c.jitter_ = jitter;
        c.log_det_ = 2.0 * c.lower_.diagonal().array().log().sum();
        return c;
      }
      jitter = jitter == 0.0 ? kJitterStart * jitter_scale : jitter * 10.0;
      if (jitter > kJitterMax * jitter_scale * (1.0 + 1e-9)) {
        std::ostringstream os;
        os << "CovMatrix: Cholesky failed after jitter " << kJitterMax * jitter_scale << " (n=" << m.rows()
           << ", diag range [" << m.diagonal().minCoeff() << ", " << m.diagonal().maxCoeff() << "])";
        throw NumericError(os.str());
      }
    }
  }

  const Eigen::MatrixXd& matrix() const { return matrix_; }
  const Eigen::MatrixXd& lower() const { return lower_; }
  double jitter() const { return jitter_; }
  double log_det() const { return log_det_; }
  Eigen::Index size() const { return matrix_.rows(); }

 private:
  Eigen::MatrixXd matrix_;
  Eigen::MatrixXd lower_;
  double jitter_ = 0.0;
  double log_det_ = 0.0;
};

/// K[i][j] = se_kernel(times[i], times[j]).
inline Eigen::MatrixXd gram_matrix(std::span<const double> times, const KernelHyper& h) {
  h.validate();
  detail::check_increasing(times, "gram");
  const auto n = static_cast<Eigen::Index>(times.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = h.sigma_k * h.sigma_k;
    for (Eigen::Index j = 0; j < i; ++j) {
      k(i, j) = se_kernel(times[i], times[j], h);
      k(j, i) = k(i, j);
    }
  }
  return k;
}

/// Factorized Gram matrix; jitter is always applied (dense RBF grams are
/// numerically rank-deficient).
inline CovMatrix gram(std::span<const double> times, const KernelHyper& h) {
  return CovMatrix::factorize(gram_matrix(times, h), h.sigma_k * h.sigma_k, true);
}

/// (K + sigma_eps^2 I) dt^2, factorized.
inline CovMatrix assemble_speed_cov(const Eigen::MatrixXd& k, const NoiseScale& noise, double dt) {
  noise.validate();
  if (k.rows() != k.cols()) throw InvalidArgument("assemble_speed_cov: K must be square");
  if (!(dt > 0.0)) throw InvalidArgument("assemble_speed_cov: dt must be > 0");
  Eigen::MatrixXd m = k;
  m.diagonal().array() += noise.sigma_eps * noise.sigma_eps;
  m *= dt * dt;
  const double scale = k.rows() > 0 ? std::max(k.diagonal().maxCoeff(), 1e-300) * dt * dt : 1.0;
  return CovMatrix::factorize(std::move(m), scale);
}

inline CovMatrix assemble_speed_cov(const CovMatrix& k, const NoiseScale& noise, double dt) {
  return assemble_speed_cov(k.matrix(), noise, dt);
}

/// log N(y | mean, cov) through the cached triangular factor.
inline double mvn_logpdf(std::span<const double> y, std::span<const double> mean, const CovMatrix& cov) {
  const auto n = static_cast<Eigen::Index>(y.size());
  if (mean.size() != y.size() || cov.size() != n) throw InvalidArgument("mvn_logpdf: dimension mismatch");
  Eigen::VectorXd r(n);
  for (Eigen::Index i = 0; i < n; ++i) r[i] = y[i] - mean[i];
  cov.lower().triangularView<Eigen::Lower>().solveInPlace(r);
  return -0.5 * r.squaredNorm() - 0.5 * cov.log_det() - 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

/// L^{-1} r.
inline std::vector<double> whiten_residuals(std::span<const double> residuals, const CovMatrix& cov) {
  const auto n = static_cast<Eigen::Index>(residuals.size());
  if (cov.size() != n) throw InvalidArgument("whiten_residuals: dimension mismatch");
  Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(residuals.data(), n);
  cov.lower().triangularView<Eigen::Lower>().solveInPlace(r);
  return {r.data(), r.data() + n};
}

enum class GpSampler { Auto, Exact, Spectral };

inline constexpr std::size_t kExactSamplingMax = 2000;
inline constexpr std::size_t kSpectralFeatures = 512;

/// Stationary random-feature draw:
///   f(t) = sigma_k sqrt(2/M) sum_m cos(w_m t + b_m), w_m ~ N(0, 1/ell^2), b_m ~ U(0, 2 pi).
/// Unbiased for the SE covariance across draws; marginals are Gaussian only
/// as M grows.
inline std::vector<double> sample_gp_path_spectral(std::span<const double> times, const KernelHyper& h, Rng& rng,
                                                   std::size_t features = kSpectralFeatures) {
  h.validate();
  std::normal_distribution<double> freq(0.0, 1.0 / h.ell);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::vector<double> w(features), b(features);
  for (std::size_t m = 0; m < features; ++m) {
    w[m] = freq(rng);
    b[m] = phase(rng);
  }
  const double amp = h.sigma_k * std::sqrt(2.0 / static_cast<double>(features));
  std::vector<double> out(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    double acc = 0.0;
    for (std::size_t m = 0; m < features; ++m) acc += std::cos(w[m] * times[i] + b[m]);
    out[i] = amp * acc;
  }
  return out;
}

/// Exact draw L z from a pre-factorized Gram matrix.
inline std::vector<double> sample_gp_path_exact(const CovMatrix& k, Rng& rng) {
  std::normal_distribution<double> z01;
  Eigen::VectorXd z(k.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = z01(rng);
  Eigen::VectorXd f = k.lower().triangularView<Eigen::Lower>() * z;
  return {f.data(), f.data() + f.size()};
}

/// One draw from GP(0, k) on `times`: exact Cholesky up to kExactSamplingMax
/// points, spectral with kSpectralFeatures features beyond.
inline std::vector<double> sample_gp_path(std::span<const double> times, const KernelHyper& h, Rng& rng,
                                          GpSampler method = GpSampler::Auto) {
  h.validate();
  detail::check_increasing(times, "sample_gp_path");
  if (method == GpSampler::Auto)
    method = times.size() <= kExactSamplingMax ? GpSampler::Exact : GpSampler::Spectral;
  if (method == GpSampler::Spectral) return sample_gp_path_spectral(times, h, rng);
  return sample_gp_path_exact(gram(times, h), rng);
}

inline std::vector<double> sample_gp_path(std::span<const double> times, const KernelHyper& h,
                                          std::uint64_t seed, GpSampler method = GpSampler::Auto) {
  Rng rng(seed);
  return sample_gp_path(times, h, rng, method);
}

}  // namespace maidm
