#pragma once

// Probabilistic calibration models {B-IDM, MA-IDM} x {pooled, hierarchical,
// unpooled}: priors, unconstrained parameter layout, likelihoods and the
// log-posterior.
//
// Every positive quantity is sampled on the log scale; the correlation factor
// of the hierarchical covariance uses the tanh/canonical-partial-correlation
// transform from lkj.hpp. All densities are on the unconstrained space, i.e.
// they include the change-of-variables Jacobians.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "maidm/episode.hpp"
#include "maidm/error.hpp"
#include "maidm/gp.hpp"
#include "maidm/idm.hpp"
#include "maidm/lkj.hpp"
#include "maidm/rng.hpp"
#include "maidm/synth.hpp"
#include "maidm/toeplitz.hpp"

namespace maidm {

enum class Pooling { Pooled, Hierarchical, Unpooled };

inline std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::Pooled: return "pooled";
    case Pooling::Hierarchical: return "hierarchical";
    case Pooling::Unpooled: return "unpooled";
  }
  return "?";
}

inline Pooling pooling_from_string(const std::string& s) {
  if (s == "pooled") return Pooling::Pooled;
  if (s == "hierarchical") return Pooling::Hierarchical;
  if (s == "unpooled") return Pooling::Unpooled;
  throw InvalidArgument("unknown pooling '" + s + "' (expected pooled|hierarchical|unpooled)");
}

using Vector5 = Eigen::Matrix<double, 5, 1>;
using Matrix5 = Eigen::Matrix<double, 5, 5>;

struct PriorConfig {
  std::array<double, 5> mu0{std::log(33.3), std::log(2.0), std::log(1.6), std::log(0.73), std::log(1.67)};
  Matrix5 Sigma0 = Matrix5::Identity() * 0.25;
  double mu_eps = std::log(0.3);
  double sigma1 = 0.5;
  double mu_k = std::log(0.2);
  double sigma2 = 0.5;
  double mu_ell = std::log(1.3);  ///< log-seconds
  double sigma_ell = 0.5;
  double lambda = 100.0;
  double eta = 2.0;

  void validate() const {
    for (double m : mu0)
      if (!std::isfinite(m)) throw InvalidArgument("PriorConfig: mu0 must be finite");
    auto pos = [](double x) { return std::isfinite(x) && x > 0.0; };
    if (!pos(sigma1) || !pos(sigma2) || !pos(sigma_ell) || !pos(lambda))
      throw InvalidArgument("PriorConfig: scale hyperparameters must be > 0");
    if (!std::isfinite(mu_eps) || !std::isfinite(mu_k) || !std::isfinite(mu_ell))
      throw InvalidArgument("PriorConfig: location hyperparameters must be finite");
    if (!(eta >= 1.0)) throw InvalidArgument("PriorConfig: eta must be >= 1");
    if (!Sigma0.isApprox(Sigma0.transpose(), 1e-12)) throw InvalidArgument("PriorConfig: Sigma0 must be symmetric");
    Eigen::LLT<Matrix5> llt(Sigma0);
    if (llt.info() != Eigen::Success) throw InvalidArgument("PriorConfig: Sigma0 must be positive definite");
  }
};

struct ModelSpec {
  NoiseModel noise = NoiseModel::MAIDM;
  Pooling pooling = Pooling::Pooled;
  PriorConfig priors;
  std::size_t num_drivers = 1;
  /// Hierarchical only: hold the population scales fixed instead of sampling them.
  std::optional<std::array<double, 5>> fixed_sigma0;
  double delta = 4.0;
  double s1 = 0.0;

  void validate() const {
    priors.validate();
    if (num_drivers < 1) throw InvalidArgument("ModelSpec: num_drivers must be >= 1");
    if (fixed_sigma0)
      for (double s : *fixed_sigma0)
        if (!(s > 0.0)) throw InvalidArgument("ModelSpec: fixed_sigma0 entries must be > 0");
  }
};

struct Block {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Named layout of the flat unconstrained parameter vector:
///   theta blocks (log v0, s0, T, alpha, beta)        : 1 (pooled) or D blocks of 5
///   [hierarchical] theta_pop (5), corr (10, tanh-CPC), log sigma0 (5 unless fixed)
///   noise: log sigma_eps [, log sigma_k, log ell]    : shared, or one per driver (unpooled)
/// The constrained vector has the same length and ordering; corr entries map to
/// correlation-matrix entries corr_<a>_<b> (row-major strict lower triangle).
class ParamLayout {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  explicit ParamLayout(const ModelSpec& spec) : spec_(spec) {
    spec.validate();
    const std::size_t d = spec.num_drivers;
    const std::size_t n_theta_blocks = spec.pooling == Pooling::Pooled ? 1 : d;
    num_noise_ = spec.noise == NoiseModel::MAIDM ? 3 : 1;
    std::size_t off = 0;
    for (std::size_t b = 0; b < n_theta_blocks; ++b) {
      blocks_.push_back({n_theta_blocks == 1 && spec.pooling == Pooling::Pooled ? "theta" : "theta[" + std::to_string(b) + "]", off, 5});
      for (std::size_t i = 0; i < 5; ++i)
        names_.push_back(spec.pooling == Pooling::Pooled ? std::string(kThetaNames[i])
                                                         : std::string(kThetaNames[i]) + "[" + std::to_string(b) + "]");
      off += 5;
    }
    if (spec.pooling == Pooling::Hierarchical) {
      pop_offset_ = off;
      blocks_.push_back({"theta_pop", off, 5});
      for (std::size_t i = 0; i < 5; ++i) names_.push_back(std::string(kThetaNames[i]) + "_pop");
      off += 5;
      corr_offset_ = off;
      for (std::size_t i = 1; i < 5; ++i)
        for (std::size_t j = 0; j < i; ++j)
          names_.push_back("corr_" + std::string(kThetaNames[j]) + "_" + std::string(kThetaNames[i]));
      std::size_t cov_size = lkj::num_free(5);
      off += lkj::num_free(5);
      if (!spec.fixed_sigma0) {
        sigma0_offset_ = off;
        for (std::size_t i = 0; i < 5; ++i) names_.push_back("sigma0_" + std::string(kThetaNames[i]));
        off += 5;
        cov_size += 5;
      }
      blocks_.push_back({"cov", corr_offset_, cov_size});
    }
    const std::size_t n_noise_blocks = spec.pooling == Pooling::Unpooled ? d : 1;
    noise_offset_ = off;
    for (std::size_t b = 0; b < n_noise_blocks; ++b) {
      const std::string sfx = n_noise_blocks == 1 ? "" : "[" + std::to_string(b) + "]";
      blocks_.push_back({"noise" + sfx, off, num_noise_});
      names_.push_back("sigma_eps" + sfx);
      if (num_noise_ == 3) {
        names_.push_back("sigma_k" + sfx);
        names_.push_back("ell" + sfx);
      }
      off += num_noise_;
    }
    size_ = off;
  }

  const ModelSpec& spec() const { return spec_; }
  std::size_t size() const { return size_; }
  std::size_t num_noise() const { return num_noise_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  const std::vector<std::string>& constrained_names() const { return names_; }

  std::size_t theta_offset(std::size_t driver) const { return spec_.pooling == Pooling::Pooled ? 0 : 5 * driver; }
  std::size_t noise_offset(std::size_t driver) const {
    return noise_offset_ + (spec_.pooling == Pooling::Unpooled ? num_noise_ * driver : 0);
  }
  std::size_t pop_offset() const { return pop_offset_; }
  std::size_t corr_offset() const { return corr_offset_; }
  std::size_t sigma0_offset() const { return sigma0_offset_; }

  std::vector<double> constrain(std::span<const double> u) const {
    check(u.size());
    std::vector<double> c(u.begin(), u.end());
    for (std::size_t i = 0; i < size_; ++i)
      if (!is_corr(i)) c[i] = std::exp(u[i]);
    if (corr_offset_ != npos) {
      const auto lc = lkj::corr_cholesky_from_unconstrained(u.subspan(corr_offset_, lkj::num_free(5)), 5);
      const Eigen::MatrixXd r = lc.lower * lc.lower.transpose();
      std::size_t idx = corr_offset_;
      for (Eigen::Index i = 1; i < 5; ++i)
        for (Eigen::Index j = 0; j < i; ++j) c[idx++] = r(i, j);
    }
    return c;
  }

  std::vector<double> unconstrain(std::span<const double> c) const {
    check(c.size());
    std::vector<double> u(c.begin(), c.end());
    for (std::size_t i = 0; i < size_; ++i) {
      if (is_corr(i)) continue;
      if (!(c[i] > 0.0)) throw InvalidArgument("unconstrain: '" + names_[i] + "' must be > 0");
      u[i] = std::log(c[i]);
    }
    if (corr_offset_ != npos) {
      Eigen::MatrixXd r = Eigen::MatrixXd::Identity(5, 5);
      std::size_t idx = corr_offset_;
      for (Eigen::Index i = 1; i < 5; ++i)
        for (Eigen::Index j = 0; j < i; ++j) r(i, j) = r(j, i) = c[idx++];
      const auto y = lkj::unconstrained_from_corr(r);
      std::copy(y.begin(), y.end(), u.begin() + static_cast<std::ptrdiff_t>(corr_offset_));
    }
    return u;
  }

  bool is_corr(std::size_t i) const {
    return corr_offset_ != npos && i >= corr_offset_ && i < corr_offset_ + lkj::num_free(5);
  }

 private:
  void check(std::size_t n) const {
    if (n != size_) throw InvalidArgument("parameter vector has " + std::to_string(n) + " entries, layout expects " +
                                          std::to_string(size_));
  }

  ModelSpec spec_;
  std::vector<Block> blocks_;
  std::vector<std::string> names_;
  std::size_t size_ = 0, num_noise_ = 1;
  std::size_t pop_offset_ = npos, corr_offset_ = npos, sigma0_offset_ = npos, noise_offset_ = 0;
};

using ParamVector = std::vector<double>;

// ---------------------------------------------------------------------------
// Density helpers

namespace detail {
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

inline double normal_logpdf(double x, double mu, double sd) {
  const double z = (x - mu) / sd;
  return -0.5 * z * z - std::log(sd) - kLogSqrt2Pi;
}

/// log N(x | mu, L L^T) given the lower Cholesky factor L.
inline double mvn5_logpdf(const Vector5& x, const Vector5& mu, const Matrix5& lower) {
  Vector5 r = x - mu;
  lower.triangularView<Eigen::Lower>().solveInPlace(r);
  return -0.5 * r.squaredNorm() - lower.diagonal().array().log().sum() - 5.0 * kLogSqrt2Pi;
}

inline Vector5 vec5(std::span<const double> u, std::size_t off) {
  return Eigen::Map<const Vector5>(u.data() + off);
}
}  // namespace detail

/// One-step-ahead speed residuals v[t+1] - (v[t] + a_IDM(i[t]) dt) on the
/// observed inputs, t = 0..n-2.
inline std::vector<double> one_step_residuals(const IdmParams& p, const Episode& ep) {
  const double dt = ep.dt();
  const auto& s = ep.s();
  const auto& v = ep.v();
  const auto& dv = ep.dv();
  std::vector<double> r(ep.size() - 1);
  for (std::size_t t = 0; t + 1 < ep.size(); ++t) {
    if (!(s[t] > 0.0)) throw DomainError("likelihood: observed gap <= 0 in episode '" + ep.driver_id() + "'");
    r[t] = v[t + 1] - (v[t] + detail::accel_unchecked(s[t], v[t], dv[t], p) * dt);
  }
  return r;
}

/// Sum over t of log N(v[t+1] | F_IDM(i[t]; theta), (sigma_eps dt)^2).
inline double loglik_bidm(const IdmParams& p, const NoiseScale& e, const Episode& ep) {
  p.validate();
  e.validate();
  const double sd = e.sigma_eps * ep.dt();
  const auto r = one_step_residuals(p, ep);
  double ll = 0.0;
  for (double x : r) ll += detail::normal_logpdf(x, 0.0, sd);
  return ll;
}

/// Residual series above this length use the O(n)-memory streaming recursion
/// instead of a stored factor.
inline constexpr std::size_t kStoredFactorMax = 4096;

/// log N(v | F_IDM(i; theta), (K + sigma_eps^2 I) dt^2) over the one-step-ahead
/// speed vector. `cache` is optional.
inline double loglik_maidm(const IdmParams& p, const NoiseScale& e, const KernelHyper& h, const Episode& ep,
                           StationaryFactorCache* cache = nullptr) {
  p.validate();
  e.validate();
  h.validate();
  const auto r = one_step_residuals(p, ep);
  const double dt = ep.dt();
  if (r.size() > kStoredFactorMax)
    return stationary_logpdf_streaming(speed_autocov(r.size(), dt, h, e), r, h.sigma_k * h.sigma_k * dt * dt);
  if (cache) return cache->get(r.size(), dt, h, e)->logpdf(r);
  return StationaryFactor::build(speed_autocov(r.size(), dt, h, e), h.sigma_k * h.sigma_k * dt * dt).logpdf(r);
}

/// Log prior density on the unconstrained space.
inline double log_prior(std::span<const double> u, const ParamLayout& layout) {
  if (u.size() != layout.size()) throw InvalidArgument("log_prior: parameter vector size mismatch");
  const ModelSpec& sp = layout.spec();
  const auto& pr = sp.priors;
  const Vector5 mu0 = Eigen::Map<const Vector5>(pr.mu0.data());
  double lp = 0.0;

  // Scalar noise priors: ln x ~ N(mu, sd), expressed on u = ln x.
  const std::size_t n_noise_blocks = sp.pooling == Pooling::Unpooled ? sp.num_drivers : 1;
  for (std::size_t b = 0; b < n_noise_blocks; ++b) {
    const std::size_t off = layout.noise_offset(b);
    lp += detail::normal_logpdf(u[off], pr.mu_eps, pr.sigma1);
    if (layout.num_noise() == 3) {
      lp += detail::normal_logpdf(u[off + 1], pr.mu_k, pr.sigma2);
      lp += detail::normal_logpdf(u[off + 2], pr.mu_ell, pr.sigma_ell);
    }
  }

  if (sp.pooling != Pooling::Hierarchical) {
    const Matrix5 l0 = Eigen::LLT<Matrix5>(pr.Sigma0).matrixL();
    const std::size_t n_theta = sp.pooling == Pooling::Pooled ? 1 : sp.num_drivers;
    for (std::size_t d = 0; d < n_theta; ++d)
      lp += detail::mvn5_logpdf(detail::vec5(u, layout.theta_offset(d)), mu0, l0);
    return lp;
  }

  // Hierarchical: sigma0 ~ Exp(lambda), R ~ LKJ(eta), Sigma = diag(sigma0) R diag(sigma0),
  // ln theta ~ N(mu0, Sigma), ln theta_d ~ N(ln theta, Sigma).
  Vector5 sigma0;
  if (sp.fixed_sigma0) {
    sigma0 = Eigen::Map<const Vector5>(sp.fixed_sigma0->data());
  } else {
    for (int i = 0; i < 5; ++i) {
      const double ui = u[layout.sigma0_offset() + static_cast<std::size_t>(i)];
      sigma0[i] = std::exp(ui);
      lp += std::log(pr.lambda) - pr.lambda * sigma0[i] + ui;
    }
  }
  const auto lc = lkj::corr_cholesky_from_unconstrained(u.subspan(layout.corr_offset(), lkj::num_free(5)), 5);
  lp += lc.log_jacobian + lkj::corr_cholesky_logpdf(lc.lower, pr.eta);
  const Matrix5 chol = sigma0.asDiagonal() * Matrix5(lc.lower);
  const Vector5 pop = detail::vec5(u, layout.pop_offset());
  lp += detail::mvn5_logpdf(pop, mu0, chol);
  for (std::size_t d = 0; d < sp.num_drivers; ++d)
    lp += detail::mvn5_logpdf(detail::vec5(u, layout.theta_offset(d)), pop, chol);
  return lp;
}


struct LogDensity {
  double value = 0.0;
  std::string tag;  ///< empty when finite; otherwise names the failing component
};

/// Log-posterior over a set of episodes (one per driver). Holds per-driver
/// likelihood memos and a covariance-factor cache, so an instance must not be
/// evaluated from several threads at once: give each thread its own `clone()`.
class Posterior {
 public:
  Posterior(ModelSpec spec, std::vector<Episode> episodes, std::size_t cache_capacity = 8)
      : layout_(spec),
        episodes_(std::make_shared<const std::vector<Episode>>(std::move(episodes))),
        cache_capacity_(cache_capacity),
        cache_(std::make_shared<StationaryFactorCache>(cache_capacity)) {
    if (episodes_->size() != layout_.spec().num_drivers)
      throw InvalidArgument("Posterior: " + std::to_string(episodes_->size()) + " episodes for " +
                            std::to_string(layout_.spec().num_drivers) + " drivers");
    for (const auto& ep : *episodes_)
      if (ep.size() < 2) throw InvalidArgument("Posterior: episode '" + ep.driver_id() + "' has < 2 samples");
    memo_.resize(episodes_->size());
  }

  Posterior clone() const {
    Posterior p(*this);
    p.cache_ = std::make_shared<StationaryFactorCache>(cache_capacity_);
    for (auto& m : p.memo_) m = {};
    return p;
  }

  const ParamLayout& layout() const { return layout_; }
  const ModelSpec& spec() const { return layout_.spec(); }
  const std::vector<Episode>& episodes() const { return *episodes_; }
  std::size_t dim() const { return layout_.size(); }

  IdmParams theta(std::span<const double> u, std::size_t driver) const {
    const std::size_t off = layout_.theta_offset(driver);
    return {std::exp(u[off]), std::exp(u[off + 1]), std::exp(u[off + 2]), std::exp(u[off + 3]), std::exp(u[off + 4]),
            spec().delta, spec().s1};
  }
  NoiseScale noise(std::span<const double> u, std::size_t driver) const {
    return {std::exp(u[layout_.noise_offset(driver)])};
  }
  KernelHyper kernel(std::span<const double> u, std::size_t driver) const {
    const std::size_t off = layout_.noise_offset(driver);
    if (layout_.num_noise() < 3) throw InvalidArgument("kernel: B-IDM layout has no GP hyperparameters");
    return {std::exp(u[off + 1]), std::exp(u[off + 2])};
  }

  double log_prior(std::span<const double> u) const {
    check(u);
    return maidm::log_prior(u, layout_);
  }

  double driver_loglik(std::span<const double> u, std::size_t d) {
    const std::size_t toff = layout_.theta_offset(d), noff = layout_.noise_offset(d);
    MemoKey key{};
    std::copy_n(u.begin() + static_cast<std::ptrdiff_t>(toff), 5, key.begin());
    std::copy_n(u.begin() + static_cast<std::ptrdiff_t>(noff), layout_.num_noise(), key.begin() + 5);
    auto& memo = memo_[d];
    ++memo.clock;
    for (auto& slot : memo.slots)
      if (slot.valid && std::memcmp(slot.key.data(), key.data(), sizeof(double) * key.size()) == 0) {
        slot.used = memo.clock;
        return slot.value;
      }

    const Episode& ep = (*episodes_)[d];
    const IdmParams p = theta(u, d);
    const NoiseScale e = noise(u, d);
    const double ll = spec().noise == NoiseModel::BIDM ? loglik_bidm(p, e, ep)
                                                       : loglik_maidm(p, e, kernel(u, d), ep, cache_.get());
    auto& slot = *std::min_element(memo.slots.begin(), memo.slots.end(),
                                   [](const MemoSlot& a, const MemoSlot& b) { return a.used < b.used; });
    slot = {key, ll, memo.clock, true};
    return ll;
  }

  LogDensity evaluate(std::span<const double> u) {
    check(u);
    for (double x : u)
      if (!std::isfinite(x)) return {-std::numeric_limits<double>::infinity(), "non-finite parameter"};
    double lp = 0.0;
    try {
      lp = log_prior(u);
    } catch (const std::exception& ex) {
      return {-std::numeric_limits<double>::infinity(), std::string("prior: ") + ex.what()};
    }
    if (!std::isfinite(lp)) return {-std::numeric_limits<double>::infinity(), "prior non-finite"};
    for (std::size_t d = 0; d < episodes_->size(); ++d) {
      double ll = 0.0;
      try {
        ll = driver_loglik(u, d);
      } catch (const std::exception& ex) {
        return {-std::numeric_limits<double>::infinity(), "likelihood[" + std::to_string(d) + "]: " + ex.what()};
      }
      if (!std::isfinite(ll))
        return {-std::numeric_limits<double>::infinity(), "likelihood[" + std::to_string(d) + "] non-finite"};
      lp += ll;
    }
    return {lp, {}};
  }

  double operator()(std::span<const double> u) { return evaluate(u).value; }

  /// Prior-mean starting point jittered by a factor in [0.9, 1.1] per positive
  /// parameter (and +-0.1 on the correlation coordinates).
  ParamVector initial_point(Rng& rng) const {
    std::uniform_real_distribution<double> jit(-0.1, 0.1);
    const auto& pr = spec().priors;
    ParamVector u(dim(), 0.0);
    const std::size_t n_theta = spec().pooling == Pooling::Pooled ? 1 : spec().num_drivers;
    for (std::size_t d = 0; d < n_theta; ++d)
      for (std::size_t i = 0; i < 5; ++i) u[layout_.theta_offset(d) + i] = pr.mu0[i] + std::log1p(jit(rng));
    if (spec().pooling == Pooling::Hierarchical) {
      for (std::size_t i = 0; i < 5; ++i) u[layout_.pop_offset() + i] = pr.mu0[i] + std::log1p(jit(rng));
      for (std::size_t i = 0; i < lkj::num_free(5); ++i) u[layout_.corr_offset() + i] = jit(rng);
      if (!spec().fixed_sigma0)
        for (std::size_t i = 0; i < 5; ++i) u[layout_.sigma0_offset() + i] = std::log(1.0 / pr.lambda) + std::log1p(jit(rng));
    }
    const std::size_t n_noise = spec().pooling == Pooling::Unpooled ? spec().num_drivers : 1;
    for (std::size_t b = 0; b < n_noise; ++b) {
      const std::size_t off = layout_.noise_offset(b);
      u[off] = pr.mu_eps + std::log1p(jit(rng));
      if (layout_.num_noise() == 3) {
        u[off + 1] = pr.mu_k + std::log1p(jit(rng));
        u[off + 2] = pr.mu_ell + std::log1p(jit(rng));
      }
    }
    return u;
  }

 private:
  using MemoKey = std::array<double, 8>;
  struct MemoSlot {
    MemoKey key{};
    double value = 0.0;
    std::uint64_t used = 0;
    bool valid = false;
  };
  // Least-recently-used pair: the current state and the latest proposal.
  struct Memo {
    std::array<MemoSlot, 2> slots{};
    std::uint64_t clock = 0;
  };

  void check(std::span<const double> u) const {
    if (u.size() != layout_.size())
      throw InvalidArgument("parameter vector has " + std::to_string(u.size()) + " entries, layout expects " +
                            std::to_string(layout_.size()));
  }

  ParamLayout layout_;
  std::shared_ptr<const std::vector<Episode>> episodes_;
  std::size_t cache_capacity_;
  std::shared_ptr<StationaryFactorCache> cache_;
  std::vector<Memo> memo_;
};

inline double log_prior(std::span<const double> u, const ModelSpec& spec) { return log_prior(u, ParamLayout(spec)); }

inline LogDensity log_posterior(std::span<const double> u, const ModelSpec& spec, const std::vector<Episode>& data) {
  Posterior post(spec, data);
  return post.evaluate(u);
}

}  // namespace maidm
