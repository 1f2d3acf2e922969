#pragma once

// Multi-chain MCMC over an unconstrained log-density.
//
// Default kernel: block-wise random-walk Metropolis. Each block keeps its own
// Gaussian proposal N(0, lambda C). During warmup C is re-estimated at the end
// of doubling windows (shrunk toward its diagonal) and log lambda follows a
// Robbins-Monro recursion toward the target acceptance rate; both are frozen
// afterwards. Optional kernel: HMC on the full vector with central
// finite-difference gradients, dual-averaged step size and a diagonal mass
// matrix.
//
// Chain c draws from make_rng(seed, c) and owns the log-density object built
// by the factory for it, so results do not depend on the thread count.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "maidm/error.hpp"
#include "maidm/model.hpp"
#include "maidm/rng.hpp"

namespace maidm {

enum class SamplerKind { RWM, HMC };

inline std::string to_string(SamplerKind k) { return k == SamplerKind::RWM ? "rwm" : "hmc"; }

inline SamplerKind sampler_kind_from_string(const std::string& s) {
  if (s == "rwm") return SamplerKind::RWM;
  if (s == "hmc") return SamplerKind::HMC;
  throw InvalidArgument("unknown sampler '" + s + "' (expected rwm|hmc)");
}

struct SamplerConfig {
  SamplerKind kind = SamplerKind::RWM;
  std::size_t num_chains = 4;
  std::size_t warmup_steps = 5000;
  std::size_t draw_steps = 5000;
  std::size_t thin = 1;
  /// Unset: 0.234 (RWM) or 0.8 (HMC).
  std::optional<double> target_accept;
  /// First covariance window; later windows double. Covariance adaptation
  /// stops at `cov_adapt_fraction` of warmup, the rest tunes the scale only.
  std::size_t adapt_window = 100;
  double cov_adapt_fraction = 0.8;
  double shrinkage = 0.1;       ///< weight of diag(C) in the adapted covariance
  double initial_scale = 0.05;  ///< proposal sd per coordinate before adaptation
  std::uint64_t seed = 0;
  std::size_t threads = 0;  ///< 0: min(chains, hardware threads)
  std::vector<Block> blocks;  ///< empty: one block over the whole vector
  double min_accept = 0.01;   ///< post-warmup per-block acceptance floor
  // HMC
  double fd_rel_step = 1e-5;
  std::size_t hmc_max_leapfrog = 64;
  double hmc_path_length = 1.5;

  double target() const { return target_accept.value_or(kind == SamplerKind::RWM ? 0.234 : 0.8); }

  void validate(std::size_t dim) const {
    if (num_chains < 1) throw InvalidArgument("sampler: num_chains must be >= 1");
    if (draw_steps < 1) throw InvalidArgument("sampler: draw_steps must be >= 1");
    if (thin < 1) throw InvalidArgument("sampler: thin must be >= 1");
    if (!(target() > 0.0 && target() < 1.0)) throw InvalidArgument("sampler: target_accept must be in (0, 1)");
    if (adapt_window < 1) throw InvalidArgument("sampler: adapt_window must be >= 1");
    if (!(shrinkage >= 0.0 && shrinkage <= 1.0)) throw InvalidArgument("sampler: shrinkage must be in [0, 1]");
    if (!(initial_scale > 0.0)) throw InvalidArgument("sampler: initial_scale must be > 0");
    if (!(cov_adapt_fraction > 0.0 && cov_adapt_fraction <= 1.0))
      throw InvalidArgument("sampler: cov_adapt_fraction must be in (0, 1]");
    if (!(fd_rel_step > 0.0)) throw InvalidArgument("sampler: fd_rel_step must be > 0");
    if (hmc_max_leapfrog < 1) throw InvalidArgument("sampler: hmc_max_leapfrog must be >= 1");
    std::vector<int> cover(dim, 0);
    for (const auto& b : blocks) {
      if (b.size == 0 || b.offset + b.size > dim)
        throw InvalidArgument("sampler: block '" + b.name + "' out of range for dimension " + std::to_string(dim));
      for (std::size_t i = b.offset; i < b.offset + b.size; ++i) ++cover[i];
    }
    if (!blocks.empty())
      for (std::size_t i = 0; i < dim; ++i)
        if (cover[i] != 1) throw InvalidArgument("sampler: blocks must cover each coordinate exactly once");
  }
};

struct ChainInfo {
  std::uint64_t seed = 0;
  std::vector<double> block_accept;  ///< post-warmup acceptance rate per block
  std::vector<double> block_scale;   ///< frozen lambda per block (HMC: step size)
  std::uint64_t proposal_hash_frozen = 0;  ///< hash of the proposal at the end of warmup
  std::uint64_t proposal_hash_final = 0;   ///< same, recomputed after the last draw
  std::size_t non_finite_proposals = 0;
  std::size_t divergences = 0;
};

struct PosteriorSamples {
  std::vector<std::string> names;  ///< constrained parameter names
  std::vector<std::string> block_names;
  std::size_t num_chains = 0;
  std::size_t num_draws = 0;  ///< per chain
  std::size_t dim = 0;
  std::vector<double> values;         ///< constrained, [chain][draw][param]
  std::vector<double> unconstrained;  ///< same layout
  std::vector<double> log_density;    ///< [chain][draw]
  std::vector<ChainInfo> chains;
  std::uint64_t master_seed = 0;
  SamplerKind kind = SamplerKind::RWM;

  double at(std::size_t chain, std::size_t draw, std::size_t param) const {
    return values[(chain * num_draws + draw) * dim + param];
  }
  std::size_t index(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw InvalidArgument("no parameter named '" + name + "' in samples");
    return static_cast<std::size_t>(it - names.begin());
  }
  std::vector<double> chain_series(std::size_t chain, std::size_t param) const {
    std::vector<double> out(num_draws);
    for (std::size_t d = 0; d < num_draws; ++d) out[d] = at(chain, d, param);
    return out;
  }
  std::vector<std::vector<double>> per_chain(std::size_t param) const {
    std::vector<std::vector<double>> out;
    for (std::size_t c = 0; c < num_chains; ++c) out.push_back(chain_series(c, param));
    return out;
  }
  std::vector<double> pooled(std::size_t param) const {
    std::vector<double> out;
    out.reserve(num_chains * num_draws);
    for (std::size_t c = 0; c < num_chains; ++c)
      for (std::size_t d = 0; d < num_draws; ++d) out.push_back(at(c, d, param));
    return out;
  }
};

using LogDensityFn = std::function<double(std::span<const double>)>;
using ConstrainFn = std::function<std::vector<double>(std::span<const double>)>;

namespace detail {

inline std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

/// Running mean/covariance (Welford).
struct Welford {
  Eigen::VectorXd mean;
  Eigen::MatrixXd m2;
  std::size_t n = 0;
  explicit Welford(Eigen::Index d = 0) : mean(Eigen::VectorXd::Zero(d)), m2(Eigen::MatrixXd::Zero(d, d)) {}
  void add(const Eigen::VectorXd& x) {
    ++n;
    const Eigen::VectorXd delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean).transpose();
  }
  Eigen::MatrixXd cov() const { return n > 1 ? Eigen::MatrixXd(m2 / static_cast<double>(n - 1)) : Eigen::MatrixXd(m2 * 0.0); }
  void reset() {
    mean.setZero();
    m2.setZero();
    n = 0;
  }
};

/// End iterations (exclusive) of the covariance windows inside warmup.
inline std::vector<std::size_t> adaptation_windows(std::size_t warmup, std::size_t first, double fraction) {
  std::vector<std::size_t> ends;
  const auto stop = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(warmup)));
  std::size_t end = 0, len = first;
  while (end + len <= stop) {
    end += len;
    len *= 2;
    if (end + len > stop) end = stop;  // stretch the last window to the boundary
    ends.push_back(end);
    if (end == stop) break;
  }
  return ends;
}

struct RwmBlock {
  std::size_t offset = 0, size = 0;
  Eigen::MatrixXd chol;  ///< of C
  double log_lambda = 0.0;
  double rm_count = 0.0;
  std::size_t accepted = 0, proposed = 0;
  Welford window;
};

class ChainRunner {
 public:
  ChainRunner(const SamplerConfig& cfg, std::vector<Block> blocks, LogDensityFn logpost, std::vector<double> init,
              std::size_t chain)
      : cfg_(cfg), blocks_(std::move(blocks)), logpost_(std::move(logpost)), x_(std::move(init)), chain_(chain),
        rng_(make_rng(cfg.seed, chain)) {
    info_.seed = derive_seed(cfg.seed, chain);
  }

  /// Stores post-warmup states into `u_out` ([draw][dim]) and log densities into `lp_out`.
  void run(double* u_out, double* lp_out) {
    lp_ = logpost_(x_);
    if (!std::isfinite(lp_))
      throw NumericError("chain " + std::to_string(chain_) + ": log density is not finite at the initial point");
    if (cfg_.kind == SamplerKind::RWM)
      run_rwm(u_out, lp_out);
    else
      run_hmc(u_out, lp_out);
  }

  const ChainInfo& info() const { return info_; }

 private:
  // ---------------------------------------------------------------- RWM
  void run_rwm(double* u_out, double* lp_out) {
    const double target = cfg_.target();
    for (const auto& b : blocks_) {
      RwmBlock rb;
      rb.offset = b.offset;
      rb.size = b.size;
      const auto d = static_cast<Eigen::Index>(b.size);
      rb.chol = Eigen::MatrixXd::Identity(d, d) * cfg_.initial_scale;
      rb.log_lambda = 0.0;
      rb.window = Welford(d);
      rwm_.push_back(std::move(rb));
    }
    const auto windows = adaptation_windows(cfg_.warmup_steps, cfg_.adapt_window, cfg_.cov_adapt_fraction);
    std::size_t next_window = 0;
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif;
    std::vector<double> prop(x_.size());
    Eigen::VectorXd z;
    const std::size_t total = cfg_.warmup_steps + cfg_.draw_steps;
    std::size_t stored = 0;

    for (std::size_t it = 0; it < total; ++it) {
      const bool warm = it < cfg_.warmup_steps;
      if (it == cfg_.warmup_steps) {
        info_.proposal_hash_frozen = rwm_hash();
        for (auto& b : rwm_) b.accepted = b.proposed = 0;
      }
      for (auto& b : rwm_) {
        const auto d = static_cast<Eigen::Index>(b.size);
        z.resize(d);
        for (Eigen::Index i = 0; i < d; ++i) z[i] = normal(rng_);
        const Eigen::VectorXd step = b.chol.triangularView<Eigen::Lower>() * z * std::exp(0.5 * b.log_lambda);
        std::copy(x_.begin(), x_.end(), prop.begin());
        for (Eigen::Index i = 0; i < d; ++i) prop[b.offset + static_cast<std::size_t>(i)] += step[i];
        const double lp_prop = logpost_(prop);
        double acc = 0.0;
        if (std::isfinite(lp_prop)) {
          acc = std::min(1.0, std::exp(lp_prop - lp_));
        } else {
          ++info_.non_finite_proposals;
        }
        ++b.proposed;
        if (unif(rng_) < acc) {
          std::swap(x_, prop);
          lp_ = lp_prop;
          ++b.accepted;
        }
        if (warm) {
          b.rm_count += 1.0;
          b.log_lambda += (acc - target) / std::pow(b.rm_count, 0.6);
          b.log_lambda = std::clamp(b.log_lambda, -30.0, 30.0);
        }
      }
      if (warm) {
        for (auto& b : rwm_)
          b.window.add(Eigen::Map<const Eigen::VectorXd>(x_.data() + b.offset, static_cast<Eigen::Index>(b.size)));
        if (next_window < windows.size() && it + 1 == windows[next_window]) {
          ++next_window;
          for (auto& b : rwm_) update_block_cov(b);
        }
      } else if ((it - cfg_.warmup_steps) % cfg_.thin == 0) {
        std::copy(x_.begin(), x_.end(), u_out + stored * x_.size());
        lp_out[stored] = lp_;
        ++stored;
      }
    }
    if (cfg_.warmup_steps == 0) info_.proposal_hash_frozen = rwm_hash();
    info_.proposal_hash_final = rwm_hash();
    for (const auto& b : rwm_) {
      info_.block_accept.push_back(b.proposed ? static_cast<double>(b.accepted) / static_cast<double>(b.proposed) : 0.0);
      info_.block_scale.push_back(std::exp(b.log_lambda));
    }
  }

  void update_block_cov(RwmBlock& b) {
    if (b.window.n < 2 * b.size + 10) {
      b.window.reset();
      return;
    }
    const auto d = static_cast<Eigen::Index>(b.size);
    Eigen::MatrixXd c = b.window.cov();
    Eigen::MatrixXd shrunk = (1.0 - cfg_.shrinkage) * c;
    shrunk.diagonal() += cfg_.shrinkage * c.diagonal();
    const double floor = 1e-12 * std::max(1.0, shrunk.diagonal().maxCoeff());
    shrunk.diagonal().array() += floor;
    Eigen::LLT<Eigen::MatrixXd> llt(shrunk);
    b.window.reset();
    if (llt.info() != Eigen::Success || !llt.matrixL().toDenseMatrix().allFinite()) return;
    if (!(shrunk.diagonal().minCoeff() > 0.0)) return;
    b.chol = llt.matrixL();
    b.log_lambda = std::log(2.38 * 2.38 / static_cast<double>(d));
    b.rm_count = 0.0;
  }

  std::uint64_t rwm_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& b : rwm_) {
      h = fnv1a(b.chol.data(), sizeof(double) * static_cast<std::size_t>(b.chol.size()), h);
      h = fnv1a(&b.log_lambda, sizeof(double), h);
    }
    return h;
  }

  // ---------------------------------------------------------------- HMC
  Eigen::VectorXd gradient(const Eigen::VectorXd& x) {
    const auto n = x.size();
    Eigen::VectorXd g(n);
    std::vector<double> y(x.data(), x.data() + n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double h = cfg_.fd_rel_step * std::max(1.0, std::abs(x[i]));
      const auto iu = static_cast<std::size_t>(i);
      y[iu] = x[i] + h;
      const double fp = logpost_(y);
      y[iu] = x[i] - h;
      const double fm = logpost_(y);
      y[iu] = x[i];
      g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
  }

  /// One trajectory; returns the acceptance probability and updates state.
  double hmc_transition(double eps, std::size_t steps, const Eigen::VectorXd& inv_mass, bool& divergent) {
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif;
    const auto n = static_cast<Eigen::Index>(x_.size());
    Eigen::VectorXd q = Eigen::Map<const Eigen::VectorXd>(x_.data(), n);
    Eigen::VectorXd p(n);
    for (Eigen::Index i = 0; i < n; ++i) p[i] = normal(rng_) / std::sqrt(inv_mass[i]);
    const double h0 = -lp_ + 0.5 * p.cwiseProduct(inv_mass).dot(p);
    if (!grad_valid_) {
      grad_ = gradient(q);
      grad_valid_ = true;
    }
    Eigen::VectorXd g = grad_;
    double lp_new = lp_;
    divergent = false;
    for (std::size_t s = 0; s < steps; ++s) {
      p += 0.5 * eps * g;
      q += eps * inv_mass.cwiseProduct(p);
      std::vector<double> qv(q.data(), q.data() + n);
      lp_new = logpost_(qv);
      if (!std::isfinite(lp_new)) {
        divergent = true;
        break;
      }
      g = gradient(q);
      p += 0.5 * eps * g;
    }
    double acc = 0.0;
    if (!divergent && g.allFinite()) {
      const double h1 = -lp_new + 0.5 * p.cwiseProduct(inv_mass).dot(p);
      if (!std::isfinite(h1) || h1 - h0 > 1000.0) divergent = true;
      else acc = std::min(1.0, std::exp(h0 - h1));
    } else {
      divergent = true;
    }
    if (divergent) ++info_.divergences;
    if (unif(rng_) < acc) {
      for (Eigen::Index i = 0; i < n; ++i) x_[static_cast<std::size_t>(i)] = q[i];
      lp_ = lp_new;
      grad_ = g;
    }
    return acc;
  }

  void run_hmc(double* u_out, double* lp_out) {
    const auto n = static_cast<Eigen::Index>(x_.size());
    Eigen::VectorXd inv_mass = Eigen::VectorXd::Constant(n, cfg_.initial_scale * cfg_.initial_scale);
    double eps = 0.5;
    auto reset_da = [&](double e0, double& mu, double& hbar, double& log_eps_bar, double& m) {
      mu = std::log(10.0 * e0);
      hbar = 0.0;
      log_eps_bar = 0.0;
      m = 0.0;
    };
    double mu = 0, hbar = 0, log_eps_bar = 0, m = 0;
    reset_da(eps, mu, hbar, log_eps_bar, m);
    const auto windows = adaptation_windows(cfg_.warmup_steps, cfg_.adapt_window, cfg_.cov_adapt_fraction);
    std::size_t next_window = 0;
    Welford var(n);
    const double target = cfg_.target();
    const std::size_t total = cfg_.warmup_steps + cfg_.draw_steps;
    std::size_t stored = 0, accepted_post = 0, post = 0;
    auto n_steps = [&](double e) {
      return std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(cfg_.hmc_path_length / e)), 1,
                                     cfg_.hmc_max_leapfrog);
    };
    for (std::size_t it = 0; it < total; ++it) {
      const bool warm = it < cfg_.warmup_steps;
      if (it == cfg_.warmup_steps) {
        if (cfg_.warmup_steps > 0) eps = std::exp(log_eps_bar);
        info_.proposal_hash_frozen = hmc_hash(inv_mass, eps);
      }
      bool div = false;
      const double acc = hmc_transition(eps, n_steps(eps), inv_mass, div);
      if (warm) {
        m += 1.0;
        const double w = 1.0 / (m + 10.0);
        hbar = (1.0 - w) * hbar + w * (target - acc);
        const double log_eps = mu - std::sqrt(m) / 0.05 * hbar;
        const double eta = std::pow(m, -0.75);
        log_eps_bar = eta * log_eps + (1.0 - eta) * log_eps_bar;
        eps = std::exp(std::clamp(log_eps, -20.0, 5.0));
        var.add(Eigen::Map<const Eigen::VectorXd>(x_.data(), n));
        if (next_window < windows.size() && it + 1 == windows[next_window]) {
          ++next_window;
          if (var.n >= 10) {
            Eigen::VectorXd v = var.cov().diagonal();
            const double nn = static_cast<double>(var.n);
            v = (nn / (nn + 5.0)) * v.array() + 1e-3 * (5.0 / (nn + 5.0)) * cfg_.initial_scale * cfg_.initial_scale;
            if (v.allFinite() && v.minCoeff() > 0.0) inv_mass = v;
            grad_valid_ = false;
            reset_da(eps, mu, hbar, log_eps_bar, m);
          }
          var.reset();
        }
      } else {
        ++post;
        if (acc > 0.0 && std::memcmp(&lp_, &lp_, sizeof(double)) == 0) accepted_post += acc >= 1.0 ? 1 : 0;
        if ((it - cfg_.warmup_steps) % cfg_.thin == 0) {
          std::copy(x_.begin(), x_.end(), u_out + stored * x_.size());
          lp_out[stored] = lp_;
          ++stored;
        }
        hmc_acc_sum_ += acc;
      }
    }
    if (cfg_.warmup_steps == 0) info_.proposal_hash_frozen = hmc_hash(inv_mass, eps);
    info_.proposal_hash_final = hmc_hash(inv_mass, eps);
    info_.block_accept.push_back(post ? hmc_acc_sum_ / static_cast<double>(post) : 0.0);
    info_.block_scale.push_back(eps);
    (void)accepted_post;
  }

  static std::uint64_t hmc_hash(const Eigen::VectorXd& inv_mass, double eps) {
    std::uint64_t h = fnv1a(inv_mass.data(), sizeof(double) * static_cast<std::size_t>(inv_mass.size()));
    return fnv1a(&eps, sizeof(double), h);
  }

  const SamplerConfig& cfg_;
  std::vector<Block> blocks_;
  LogDensityFn logpost_;
  std::vector<double> x_;
  std::size_t chain_;
  Rng rng_;
  double lp_ = 0.0;
  ChainInfo info_;
  std::vector<RwmBlock> rwm_;
  Eigen::VectorXd grad_;
  bool grad_valid_ = false;
  double hmc_acc_sum_ = 0.0;
};

}  // namespace detail

/// Runs `cfg.num_chains` chains. `make_logpost(c)` builds the log-density used by
/// chain c (called on the calling thread); `init[c]` is chain c's start.
/// `constrain` maps unconstrained states to reported values (identity if empty).
inline PosteriorSamples run_chains(const std::function<LogDensityFn(std::size_t)>& make_logpost,
                                   const std::vector<std::vector<double>>& init, const SamplerConfig& cfg,
                                   std::vector<std::string> names = {}, const ConstrainFn& constrain = {}) {
  if (init.size() != cfg.num_chains)
    throw InvalidArgument("run_chains: " + std::to_string(init.size()) + " initial points for " +
                          std::to_string(cfg.num_chains) + " chains");
  const std::size_t dim = init.front().size();
  if (dim == 0) throw InvalidArgument("run_chains: empty parameter vector");
  for (const auto& x : init) {
    if (x.size() != dim) throw InvalidArgument("run_chains: initial points differ in dimension");
    for (double v : x)
      if (!std::isfinite(v)) throw InvalidArgument("run_chains: non-finite initial point");
  }
  cfg.validate(dim);
  std::vector<Block> blocks = cfg.blocks;
  if (blocks.empty()) blocks.push_back({"all", 0, dim});
  if (cfg.kind == SamplerKind::HMC) blocks = {{"all", 0, dim}};
  if (names.empty())
    for (std::size_t i = 0; i < dim; ++i) names.push_back("x[" + std::to_string(i) + "]");
  if (names.size() != dim) throw InvalidArgument("run_chains: names do not match the dimension");

  PosteriorSamples out;
  out.names = std::move(names);
  for (const auto& b : blocks) out.block_names.push_back(b.name);
  out.num_chains = cfg.num_chains;
  out.num_draws = (cfg.draw_steps + cfg.thin - 1) / cfg.thin;
  out.dim = dim;
  out.master_seed = cfg.seed;
  out.kind = cfg.kind;
  out.unconstrained.assign(out.num_chains * out.num_draws * dim, 0.0);
  out.log_density.assign(out.num_chains * out.num_draws, 0.0);
  out.chains.resize(cfg.num_chains);

  std::vector<std::unique_ptr<detail::ChainRunner>> runners;
  for (std::size_t c = 0; c < cfg.num_chains; ++c)
    runners.push_back(std::make_unique<detail::ChainRunner>(cfg, blocks, make_logpost(c), init[c], c));

  std::size_t threads = cfg.threads;
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, cfg.num_chains);
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(cfg.num_chains);
  auto worker = [&]() {
    for (std::size_t c = next++; c < cfg.num_chains; c = next++) {
      try {
        runners[c]->run(out.unconstrained.data() + c * out.num_draws * dim, out.log_density.data() + c * out.num_draws);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (std::size_t c = 0; c < cfg.num_chains; ++c) out.chains[c] = runners[c]->info();

  out.values = out.unconstrained;
  if (constrain) {
    for (std::size_t k = 0; k < out.num_chains * out.num_draws; ++k) {
      const auto v = constrain(std::span<const double>(out.unconstrained.data() + k * dim, dim));
      std::copy(v.begin(), v.end(), out.values.begin() + static_cast<std::ptrdiff_t>(k * dim));
    }
  }
  for (double v : out.values)
    if (!std::isfinite(v)) throw NumericError("run_chains: non-finite value in the stored draws");

  for (std::size_t c = 0; c < cfg.num_chains; ++c)
    for (std::size_t b = 0; b < out.chains[c].block_accept.size(); ++b)
      if (out.chains[c].block_accept[b] < cfg.min_accept)
        throw NumericError("run_chains: block '" + out.block_names[b] + "' in chain " + std::to_string(c) +
                           " accepted " + csv::fmt(out.chains[c].block_accept[b]) + " of proposals after warmup");
  return out;
}

/// Shared (thread-safe) log-density for every chain.
inline PosteriorSamples run_chains(const LogDensityFn& logpost, const std::vector<std::vector<double>>& init,
                                   const SamplerConfig& cfg, std::vector<std::string> names = {},
                                   const ConstrainFn& constrain = {}) {
  return run_chains([&](std::size_t) { return logpost; }, init, cfg, std::move(names), constrain);
}

/// Samples a model posterior. Blocks default to the layout's blocks; starts are
/// jittered prior means from stream derive_seed(seed, 1000 + chain).
inline PosteriorSamples sample_posterior(const Posterior& post, SamplerConfig cfg) {
  if (cfg.blocks.empty()) cfg.blocks = post.layout().blocks();
  std::vector<std::vector<double>> init;
  for (std::size_t c = 0; c < cfg.num_chains; ++c) {
    Rng rng = make_rng(cfg.seed, 1000 + c);
    Posterior probe = post.clone();
    std::vector<double> x;
    LogDensity ld{-std::numeric_limits<double>::infinity(), "not evaluated"};
    for (int attempt = 0; attempt < 100 && !std::isfinite(ld.value); ++attempt) {
      x = post.initial_point(rng);
      ld = probe.evaluate(x);
    }
    if (!std::isfinite(ld.value))
      throw NumericError("chain " + std::to_string(c) + ": no finite initial point (" + ld.tag + ")");
    init.push_back(std::move(x));
  }
  auto factory = [&post](std::size_t) -> LogDensityFn {
    auto p = std::make_shared<Posterior>(post.clone());
    return [p](std::span<const double> u) { return p->evaluate(u).value; };
  };
  const ParamLayout& layout = post.layout();
  return run_chains(factory, init, cfg, layout.constrained_names(),
                    [&layout](std::span<const double> u) { return layout.constrain(u); });
}

}  // namespace maidm
