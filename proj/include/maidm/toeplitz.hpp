#pragma once

// Durbin-Levinson factorization of stationary (symmetric Toeplitz) covariance
// matrices. On a uniform grid the MA-IDM speed covariance (K + se^2 I) dt^2 is
// Toeplitz, so its log-density and whitening cost O(n^2) instead of O(n^3).
// The innovations produced here are exactly L^{-1} r for the Cholesky factor L.

#include <cmath>
#include <cstring>
#include <list>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <vector>

#include <Eigen/Core>

#include "maidm/error.hpp"
#include "maidm/gp.hpp"
#include "maidm/rng.hpp"

namespace maidm {

/// First column of (K + sigma_eps^2 I) dt^2 for an n-point grid with step dt.
inline std::vector<double> speed_autocov(std::size_t n, double dt, const KernelHyper& h, const NoiseScale& e) {
  std::vector<double> g(n);
  const double dt2 = dt * dt;
  for (std::size_t k = 0; k < n; ++k) g[k] = se_kernel(0.0, static_cast<double>(k) * dt, h) * dt2;
  if (n > 0) g[0] += e.sigma_eps * e.sigma_eps * dt2;
  return g;
}

/// Stored prediction-coefficient rows of a stationary covariance. Memory is
/// n^2/2 doubles; use `stationary_logpdf_streaming` for very long series.
class StationaryFactor {
 public:
  /// Factorizes the Toeplitz matrix with first column `autocov`, escalating a
  /// diagonal jitter (x10 from 1e-10*scale up to 1e-6*scale) on failure.
  static StationaryFactor build(std::span<const double> autocov, double jitter_scale, bool always_jitter = false) {
    if (autocov.empty()) throw InvalidArgument("StationaryFactor: empty autocovariance");
    if (!(jitter_scale > 0.0)) jitter_scale = 1.0;
    double jitter = always_jitter ? CovMatrix::kJitterStart * jitter_scale : 0.0;
    for (;;) {
      StationaryFactor f;
      if (f.try_build(autocov, jitter)) return f;
      jitter = jitter == 0.0 ? CovMatrix::kJitterStart * jitter_scale : jitter * 10.0;
      if (jitter > CovMatrix::kJitterMax * jitter_scale * (1.0 + 1e-9)) {
        std::ostringstream os;
        os << "StationaryFactor: not positive definite after jitter " << CovMatrix::kJitterMax * jitter_scale
           << " (n=" << autocov.size() << ", gamma0=" << autocov[0] << ")";
        throw NumericError(os.str());
      }
    }
  }

  std::size_t size() const { return var_.size(); }
  double log_det() const { return log_det_; }
  double jitter() const { return jitter_; }
  std::span<const double> prediction_variances() const { return var_; }

  /// Standardized innovations L^{-1} r.
  std::vector<double> whiten(std::span<const double> r) const {
    check(r.size());
    std::vector<double> out(r.size());
    for (std::size_t k = 0; k < r.size(); ++k) out[k] = innovation(r, k) / std::sqrt(var_[k]);
    return out;
  }

  /// L z: maps standard-normal z to a draw from the factorized covariance.
  std::vector<double> color(std::span<const double> z) const {
    check(z.size());
    std::vector<double> y(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) {
      double pred = 0.0;
      if (k > 0) {
        const Eigen::Map<const Eigen::VectorXd> c(coef_.data() + offsets_[k], static_cast<Eigen::Index>(k));
        pred = c.dot(Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(k)));
      }
      y[k] = pred + std::sqrt(var_[k]) * z[k];
    }
    return y;
  }

  /// Zero-mean Gaussian log-density of r.
  double logpdf(std::span<const double> r) const {
    check(r.size());
    double quad = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) {
      const double e = innovation(r, k);
      quad += e * e / var_[k];
    }
    return -0.5 * quad - 0.5 * log_det_ - 0.5 * static_cast<double>(r.size()) * std::log(2.0 * std::numbers::pi);
  }

 private:
  bool try_build(std::span<const double> g, double jitter) {
    const std::size_t n = g.size();
    jitter_ = jitter;
    var_.assign(n, 0.0);
    offsets_.assign(n, 0);
    coef_.clear();
    coef_.reserve(n * (n - 1) / 2);

    std::vector<double> phi(n, 0.0), prev(n, 0.0);  // phi[j-1] = phi_{k,j}
    double v = g[0] + jitter;
    if (!(v > 0.0) || !std::isfinite(v)) return false;
    var_[0] = v;
    log_det_ = std::log(v);
    for (std::size_t k = 1; k < n; ++k) {
      double acc = g[k];
      for (std::size_t j = 1; j < k; ++j) acc -= prev[j - 1] * g[k - j];
      const double kappa = acc / v;
      if (!(std::abs(kappa) < 1.0)) return false;
      for (std::size_t j = 1; j < k; ++j) phi[j - 1] = prev[j - 1] - kappa * prev[k - j - 1];
      phi[k - 1] = kappa;
      v *= (1.0 - kappa * kappa);
      if (!(v > 0.0)) return false;
      var_[k] = v;
      log_det_ += std::log(v);
      offsets_[k] = coef_.size();
      // Row k holds the coefficient on y_i, i = 0..k-1: phi_{k, k-i}.
      for (std::size_t i = 0; i < k; ++i) coef_.push_back(phi[k - i - 1]);
      std::swap(phi, prev);
    }
    return std::isfinite(log_det_);
  }

  double innovation(std::span<const double> r, std::size_t k) const {
    if (k == 0) return r[0];
    const Eigen::Map<const Eigen::VectorXd> c(coef_.data() + offsets_[k], static_cast<Eigen::Index>(k));
    const Eigen::Map<const Eigen::VectorXd> y(r.data(), static_cast<Eigen::Index>(k));
    return r[k] - c.dot(y);
  }

  void check(std::size_t n) const {
    if (n != var_.size()) throw InvalidArgument("StationaryFactor: dimension mismatch");
  }

  std::vector<double> coef_;
  std::vector<std::size_t> offsets_;
  std::vector<double> var_;
  double log_det_ = 0.0;
  double jitter_ = 0.0;
};

/// Same value as StationaryFactor::build(...).logpdf(r) with O(n) memory.
inline double stationary_logpdf_streaming(std::span<const double> g, std::span<const double> r, double jitter_scale) {
  if (g.size() != r.size() || g.empty()) throw InvalidArgument("stationary_logpdf_streaming: dimension mismatch");
  const std::size_t n = g.size();
  double jitter = 0.0;
  for (;;) {
    std::vector<double> phi(n, 0.0), prev(n, 0.0);
    double v = g[0] + jitter;
    bool ok = v > 0.0;
    double quad = r[0] * r[0] / v, log_det = std::log(v);
    for (std::size_t k = 1; ok && k < n; ++k) {
      double acc = g[k];
      for (std::size_t j = 1; j < k; ++j) acc -= prev[j - 1] * g[k - j];
      const double kappa = acc / v;
      if (!(std::abs(kappa) < 1.0)) { ok = false; break; }
      for (std::size_t j = 1; j < k; ++j) phi[j - 1] = prev[j - 1] - kappa * prev[k - j - 1];
      phi[k - 1] = kappa;
      v *= (1.0 - kappa * kappa);
      if (!(v > 0.0)) { ok = false; break; }
      double pred = 0.0;
      for (std::size_t j = 1; j <= k; ++j) pred += phi[j - 1] * r[k - j];
      const double e = r[k] - pred;
      quad += e * e / v;
      log_det += std::log(v);
      std::swap(phi, prev);
    }
    if (ok) return -0.5 * quad - 0.5 * log_det - 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
    jitter = jitter == 0.0 ? CovMatrix::kJitterStart * jitter_scale : jitter * 10.0;
    if (jitter > CovMatrix::kJitterMax * jitter_scale * (1.0 + 1e-9))
      throw NumericError("stationary_logpdf_streaming: not positive definite after max jitter");
  }
}

/// Thread-safe LRU cache of speed-covariance factors keyed by
/// (sigma_k, ell, sigma_eps, dt, n), compared bitwise.
class StationaryFactorCache {
 public:
  explicit StationaryFactorCache(std::size_t capacity = 8) : capacity_(capacity == 0 ? 1 : capacity) {}

  std::shared_ptr<const StationaryFactor> get(std::size_t n, double dt, const KernelHyper& h, const NoiseScale& e) {
    const Key key{h.sigma_k, h.ell, e.sigma_eps, dt, n};
    {
      std::lock_guard lock(mu_);
      for (auto it = entries_.begin(); it != entries_.end(); ++it) {
        if (it->first == key) {
          entries_.splice(entries_.begin(), entries_, it);
          ++hits_;
          return entries_.front().second;
        }
      }
      ++misses_;
    }
    const auto g = speed_autocov(n, dt, h, e);
    auto f = std::make_shared<const StationaryFactor>(StationaryFactor::build(g, h.sigma_k * h.sigma_k * dt * dt));
    std::lock_guard lock(mu_);
    entries_.emplace_front(key, f);
    while (entries_.size() > capacity_) entries_.pop_back();
    return f;
  }

  std::size_t hits() const { std::lock_guard lock(mu_); return hits_; }
  std::size_t misses() const { std::lock_guard lock(mu_); return misses_; }

 private:
  struct Key {
    double sigma_k, ell, sigma_eps, dt;
    std::size_t n;
    bool operator==(const Key& o) const {
      return std::memcmp(&sigma_k, &o.sigma_k, sizeof(double)) == 0 &&
             std::memcmp(&ell, &o.ell, sizeof(double)) == 0 &&
             std::memcmp(&sigma_eps, &o.sigma_eps, sizeof(double)) == 0 &&
             std::memcmp(&dt, &o.dt, sizeof(double)) == 0 && n == o.n;
    }
  };

  std::size_t capacity_;
  mutable std::mutex mu_;
  std::list<std::pair<Key, std::shared_ptr<const StationaryFactor>>> entries_;
  std::size_t hits_ = 0, misses_ = 0;
};

/// Exact GP(0, k_SE) draw on the uniform grid 0, dt, ..., (n-1) dt via the
/// Toeplitz factor of the jittered Gram matrix; O(n^2) time.
inline std::vector<double> sample_gp_path_uniform(std::size_t n, double dt, const KernelHyper& h, Rng& rng) {
  h.validate();
  if (!(dt > 0.0)) throw InvalidArgument("sample_gp_path_uniform: dt must be > 0");
  if (n == 0) return {};
  std::vector<double> g(n);
  for (std::size_t k = 0; k < n; ++k) g[k] = se_kernel(0.0, static_cast<double>(k) * dt, h);
  const auto f = StationaryFactor::build(g, h.sigma_k * h.sigma_k, true);
  std::normal_distribution<double> z01;
  std::vector<double> z(n);
  for (auto& v : z) v = z01(rng);
  return f.color(z);
}

}  // namespace maidm
