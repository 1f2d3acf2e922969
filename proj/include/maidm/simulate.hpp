#pragma once

// Single-pair rollouts: deterministic, stochastic B-IDM (white acceleration
// noise) and stochastic MA-IDM (one GP path per replicate plus white noise),
// plus joint parameter-set sampling from posterior draws.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "maidm/episode.hpp"
#include "maidm/error.hpp"
#include "maidm/gp.hpp"
#include "maidm/idm.hpp"
#include "maidm/mcmc.hpp"
#include "maidm/rng.hpp"
#include "maidm/toeplitz.hpp"

namespace maidm {

enum class SimMode { Deterministic, StochBIDM, StochMAIDM };

inline std::string to_string(SimMode m) {
  switch (m) {
    case SimMode::Deterministic: return "deterministic";
    case SimMode::StochBIDM: return "stoch_bidm";
    case SimMode::StochMAIDM: return "stoch_maidm";
  }
  return "?";
}

inline SimMode sim_mode_from_string(const std::string& s) {
  if (s == "deterministic") return SimMode::Deterministic;
  if (s == "stoch_bidm") return SimMode::StochBIDM;
  if (s == "stoch_maidm") return SimMode::StochMAIDM;
  throw InvalidArgument("unknown simulation mode '" + s + "' (expected deterministic|stoch_bidm|stoch_maidm)");
}

struct SimConfig {
  SimMode mode = SimMode::StochMAIDM;
  std::optional<double> dt;       ///< default: the leader's grid
  std::optional<double> horizon;  ///< seconds; default: the whole leader record
  std::size_t replicates = 100;
  std::uint64_t seed = 0;
  std::optional<double> sigma_eps;  ///< overrides the parameter set's value
  std::optional<double> sigma_k;
  std::optional<double> ell;
  GpSampler gp_sampler = GpSampler::Auto;
  std::size_t threads = 1;

  void validate() const {
    if (replicates < 1) throw InvalidArgument("SimConfig: replicates must be >= 1");
    if (dt && !(*dt > 0.0)) throw InvalidArgument("SimConfig: dt must be > 0");
    if (horizon && !(*horizon > 0.0)) throw InvalidArgument("SimConfig: horizon must be > 0");
    if (sigma_eps && !(*sigma_eps >= 0.0)) throw InvalidArgument("SimConfig: sigma_eps must be >= 0");
    if (sigma_k && !(*sigma_k >= 0.0)) throw InvalidArgument("SimConfig: sigma_k must be >= 0");
    if (ell && !(*ell > 0.0)) throw InvalidArgument("SimConfig: ell must be > 0");
  }
};

/// One joint posterior draw.
struct ParameterSet {
  IdmParams theta;
  double sigma_eps = 0.0;
  double sigma_k = 0.0;
  double ell = 0.0;
  bool has_gp = false;
  std::size_t draw = 0;  ///< row index into the pooled draws
};

struct SimReplicate {
  Trajectory traj;
  std::size_t param_index = 0;
  std::uint64_t seed = 0;
};

struct SimOutput {
  SimMode mode = SimMode::Deterministic;
  double dt = 0.0;
  std::size_t steps = 0;  ///< states per uncollided replicate
  std::vector<SimReplicate> replicates;

  std::size_t collisions() const {
    return static_cast<std::size_t>(std::count_if(replicates.begin(), replicates.end(),
                                                  [](const SimReplicate& r) { return r.traj.collided; }));
  }
};

/// Which parameters a set is built from.
struct ParamSource {
  enum class Kind { Auto, Pooled, Driver, Population, NewDriver };
  Kind kind = Kind::Auto;
  std::size_t driver = 0;
};

inline ParamSource param_source_from_string(const std::string& s) {
  ParamSource src;
  if (s == "auto") return src;
  if (s == "pooled") src.kind = ParamSource::Kind::Pooled;
  else if (s == "population") src.kind = ParamSource::Kind::Population;
  else if (s == "new_driver") src.kind = ParamSource::Kind::NewDriver;
  else if (s.rfind("driver:", 0) == 0) {
    src.kind = ParamSource::Kind::Driver;
    try {
      src.driver = std::stoul(s.substr(7));
    } catch (const std::exception&) {
      throw InvalidArgument("bad driver index in parameter source '" + s + "'");
    }
  } else {
    throw InvalidArgument("unknown parameter source '" + s + "' (expected auto|pooled|population|new_driver|driver:<k>)");
  }
  return src;
}

namespace detail {

struct ColumnMap {
  std::array<std::size_t, 5> theta{};
  std::size_t sigma_eps = static_cast<std::size_t>(-1), sigma_k = static_cast<std::size_t>(-1),
              ell = static_cast<std::size_t>(-1);
  bool new_driver = false;
  std::array<std::size_t, 5> sigma0{};
  std::array<std::size_t, 10> corr{};
};

inline std::ptrdiff_t find_name(const std::vector<std::string>& names, const std::string& n) {
  const auto it = std::find(names.begin(), names.end(), n);
  return it == names.end() ? -1 : it - names.begin();
}

inline ColumnMap resolve_columns(const PosteriorSamples& s, ParamSource src) {
  const auto& names = s.names;
  if (src.kind == ParamSource::Kind::Auto) {
    if (find_name(names, "v0") >= 0) src.kind = ParamSource::Kind::Pooled;
    else if (find_name(names, "v0_pop") >= 0) src.kind = ParamSource::Kind::Population;
    else src.kind = ParamSource::Kind::Driver;
  }
  std::string sfx;
  switch (src.kind) {
    case ParamSource::Kind::Pooled: sfx = ""; break;
    case ParamSource::Kind::Driver: sfx = "[" + std::to_string(src.driver) + "]"; break;
    default: sfx = "_pop"; break;
  }
  auto need = [&](const std::string& n) {
    const auto i = find_name(names, n);
    if (i < 0) throw InvalidArgument("posterior draws have no column '" + n + "'");
    return static_cast<std::size_t>(i);
  };
  ColumnMap m;
  for (std::size_t i = 0; i < 5; ++i) m.theta[i] = need(std::string(kThetaNames[i]) + sfx);
  auto noise_col = [&](const std::string& base) -> std::size_t {
    if (src.kind == ParamSource::Kind::Driver) {
      const auto i = find_name(names, base + sfx);
      if (i >= 0) return static_cast<std::size_t>(i);
    }
    const auto i = find_name(names, base);
    return i < 0 ? static_cast<std::size_t>(-1) : static_cast<std::size_t>(i);
  };
  m.sigma_eps = noise_col("sigma_eps");
  if (m.sigma_eps == static_cast<std::size_t>(-1)) throw InvalidArgument("posterior draws have no sigma_eps column");
  m.sigma_k = noise_col("sigma_k");
  m.ell = noise_col("ell");
  if ((m.sigma_k == static_cast<std::size_t>(-1)) != (m.ell == static_cast<std::size_t>(-1)))
    throw InvalidArgument("posterior draws must carry both or neither of sigma_k and ell");
  if (src.kind == ParamSource::Kind::NewDriver) {
    m.new_driver = true;
    for (std::size_t i = 0; i < 5; ++i) m.sigma0[i] = need("sigma0_" + std::string(kThetaNames[i]));
    std::size_t k = 0;
    for (std::size_t i = 1; i < 5; ++i)
      for (std::size_t j = 0; j < i; ++j)
        m.corr[k++] = need("corr_" + std::string(kThetaNames[j]) + "_" + std::string(kThetaNames[i]));
  }
  return m;
}

inline ParameterSet set_from_row(const PosteriorSamples& s, const ColumnMap& m, std::size_t row, Rng* rng) {
  const double* x = s.values.data() + row * s.dim;
  ParameterSet p;
  std::array<double, 5> th{};
  for (std::size_t i = 0; i < 5; ++i) th[i] = x[m.theta[i]];
  if (m.new_driver) {
    // ln theta_new = ln theta_pop + diag(sigma0) L z, L the correlation Cholesky factor.
    Eigen::Matrix<double, 5, 5> r = Eigen::Matrix<double, 5, 5>::Identity();
    std::size_t k = 0;
    for (int i = 1; i < 5; ++i)
      for (int j = 0; j < i; ++j) r(i, j) = r(j, i) = x[m.corr[k++]];
    Eigen::LLT<Eigen::Matrix<double, 5, 5>> llt(r);
    if (llt.info() != Eigen::Success) throw NumericError("new_driver draw: correlation matrix not positive definite");
    std::normal_distribution<double> z01;
    Eigen::Matrix<double, 5, 1> z;
    for (int i = 0; i < 5; ++i) z[i] = z01(*rng);
    const Eigen::Matrix<double, 5, 1> lz = llt.matrixL() * z;
    for (std::size_t i = 0; i < 5; ++i) th[i] = std::exp(std::log(th[i]) + x[m.sigma0[i]] * lz[static_cast<int>(i)]);
  }
  p.theta = IdmParams::from_array(th);
  p.sigma_eps = x[m.sigma_eps];
  p.has_gp = m.sigma_k != static_cast<std::size_t>(-1);
  if (p.has_gp) {
    p.sigma_k = x[m.sigma_k];
    p.ell = x[m.ell];
  }
  p.draw = row;
  return p;
}

}  // namespace detail

/// n rows drawn uniformly with replacement from the pooled draws (joint, so
/// posterior correlations are kept). NewDriver adds one predictive draw per row.
inline std::vector<ParameterSet> sample_parameter_sets(const PosteriorSamples& s, std::size_t n, std::uint64_t seed,
                                                       ParamSource src = {}) {
  const std::size_t total = s.num_chains * s.num_draws;
  if (total == 0) throw InvalidArgument("sample_parameter_sets: empty posterior samples");
  const auto cols = detail::resolve_columns(s, src);
  Rng rng = make_rng(seed, 0);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  std::vector<ParameterSet> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(detail::set_from_row(s, cols, pick(rng), &rng));
  return out;
}

/// Posterior mean of the constrained columns of the selected set.
inline ParameterSet posterior_mean_set(const PosteriorSamples& s, ParamSource src = {}) {
  const std::size_t total = s.num_chains * s.num_draws;
  if (total == 0) throw InvalidArgument("posterior_mean_set: empty posterior samples");
  if (src.kind == ParamSource::Kind::NewDriver) src.kind = ParamSource::Kind::Population;
  const auto cols = detail::resolve_columns(s, src);
  auto mean = [&](std::size_t c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < total; ++r) acc += s.values[r * s.dim + c];
    return acc / static_cast<double>(total);
  };
  ParameterSet p;
  std::array<double, 5> th{};
  for (std::size_t i = 0; i < 5; ++i) th[i] = mean(cols.theta[i]);
  p.theta = IdmParams::from_array(th);
  p.sigma_eps = mean(cols.sigma_eps);
  p.has_gp = cols.sigma_k != static_cast<std::size_t>(-1);
  if (p.has_gp) {
    p.sigma_k = mean(cols.sigma_k);
    p.ell = mean(cols.ell);
  }
  return p;
}

/// Leader channel of `ep` on the simulation grid, truncated to the horizon.
inline LeaderTrack prepare_leader(const Episode& ep, const SimConfig& cfg) {
  const Episode grid = cfg.dt ? ep.resample(*cfg.dt) : ep;
  LeaderTrack lt = grid.leader_track();
  if (cfg.horizon) {
    const auto steps = static_cast<std::size_t>(std::llround(*cfg.horizon / grid.dt())) + 1;
    if (steps > lt.size())
      throw InvalidArgument("simulation horizon " + csv::fmt(*cfg.horizon) + " s exceeds the leader record of " +
                            csv::fmt(grid.duration()) + " s");
    lt.x.resize(steps);
    lt.v.resize(steps);
  }
  return lt;
}

namespace detail {

/// Additive forcing for one replicate: GP path (if sigma_k > 0) then white noise.
inline std::vector<double> replicate_forcing(std::size_t n, double dt, double sigma_eps, double sigma_k, double ell,
                                             bool gp, GpSampler sampler, Rng& rng) {
  std::vector<double> f(n, 0.0);
  if (gp && sigma_k > 0.0) {
    const KernelHyper h{sigma_k, ell};
    if (sampler == GpSampler::Spectral || (sampler == GpSampler::Auto && n > kExactSamplingMax)) {
      std::vector<double> times(n);
      for (std::size_t k = 0; k < n; ++k) times[k] = static_cast<double>(k) * dt;
      f = sample_gp_path_spectral(times, h, rng);
    } else {
      f = sample_gp_path_uniform(n, dt, h, rng);
    }
  }
  if (sigma_eps > 0.0) {
    std::normal_distribution<double> eps(0.0, sigma_eps);
    for (auto& v : f) v += eps(rng);
  }
  return f;
}

// Simulation allows zero noise scales, unlike the likelihood.
inline void check_noise_scales(double sigma_eps, double sigma_k, double ell) {
  if (!(std::isfinite(sigma_eps) && sigma_eps >= 0.0)) throw InvalidArgument("simulate: sigma_eps must be finite and >= 0");
  if (!(std::isfinite(sigma_k) && sigma_k >= 0.0)) throw InvalidArgument("simulate: sigma_k must be finite and >= 0");
  if (!(std::isfinite(ell) && ell > 0.0)) throw InvalidArgument("simulate: ell must be finite and > 0");
}

template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t]() {
      try {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Replicate r uses sets[r % sets.size()] and stream make_rng(cfg.seed, r).
/// Deterministic mode runs one replicate with sets[0] and no noise.
inline SimOutput simulate_ensemble(const std::vector<ParameterSet>& sets, const LeaderTrack& leader,
                                   const KinematicState& init, const SimConfig& cfg) {
  cfg.validate();
  leader.validate();
  if (sets.empty()) throw InvalidArgument("simulate: no parameter sets");
  SimOutput out;
  out.mode = cfg.mode;
  out.dt = leader.dt;
  out.steps = leader.size();
  const std::size_t reps = cfg.mode == SimMode::Deterministic ? 1 : cfg.replicates;
  if (cfg.mode == SimMode::StochMAIDM)
    for (const auto& p : sets)
      if (!p.has_gp && !(cfg.sigma_k && cfg.ell))
        throw InvalidArgument("stoch_maidm needs sigma_k and ell: the posterior draws carry none and no override is set");
  out.replicates.resize(reps);
  detail::parallel_for(reps, cfg.threads, [&](std::size_t r) {
    const std::size_t pi = r % sets.size();
    const ParameterSet& p = sets[pi];
    SimReplicate rep;
    rep.param_index = pi;
    rep.seed = derive_seed(cfg.seed, r);
    if (cfg.mode == SimMode::Deterministic) {
      rep.traj = rollout_deterministic(leader, init, p.theta);
    } else {
      Rng rng(rep.seed);
      const bool gp = cfg.mode == SimMode::StochMAIDM;
      const double se = cfg.sigma_eps.value_or(p.sigma_eps);
      const double sk = cfg.sigma_k.value_or(p.sigma_k);
      const double ell = cfg.ell.value_or(p.ell);
      const auto forcing = detail::replicate_forcing(leader.size(), leader.dt, se, sk, ell, gp, cfg.gp_sampler, rng);
      rep.traj = rollout_forced(leader, init, p.theta, forcing);
    }
    out.replicates[r] = std::move(rep);
  });
  return out;
}

inline SimOutput simulate_deterministic(const IdmParams& theta, const LeaderTrack& leader, const KinematicState& init) {
  SimConfig cfg;
  cfg.mode = SimMode::Deterministic;
  ParameterSet p;
  p.theta = theta;
  return simulate_ensemble({p}, leader, init, cfg);
}

/// N replicates with a = a_IDM + eps, eps ~ N(0, sigma_eps^2) i.i.d. per step.
inline SimOutput simulate_stochastic_bidm(const IdmParams& theta, const NoiseScale& sigma_eps, const LeaderTrack& leader,
                                          const KinematicState& init, SimConfig cfg) {
  detail::check_noise_scales(sigma_eps.sigma_eps, 0.0, 1.0);
  cfg.mode = SimMode::StochBIDM;
  ParameterSet p;
  p.theta = theta;
  p.sigma_eps = sigma_eps.sigma_eps;
  cfg.sigma_eps.reset();
  return simulate_ensemble({p}, leader, init, cfg);
}

/// N replicates with a = a_IDM + a_GP(t) + eps; one GP path per replicate
/// drawn over the whole horizon. `gp_override`, when given, replaces the GP
/// draw in every replicate.
inline SimOutput simulate_stochastic_maidm(const IdmParams& theta, const NoiseScale& sigma_eps, const KernelHyper& hyper,
                                           const LeaderTrack& leader, const KinematicState& init, SimConfig cfg,
                                           std::span<const double> gp_override = {}) {
  detail::check_noise_scales(sigma_eps.sigma_eps, hyper.sigma_k, hyper.ell);
  cfg.mode = SimMode::StochMAIDM;
  if (gp_override.empty()) {
    ParameterSet p;
    p.theta = theta;
    p.sigma_eps = sigma_eps.sigma_eps;
    p.sigma_k = hyper.sigma_k;
    p.ell = hyper.ell;
    p.has_gp = true;
    cfg.sigma_eps.reset();
    cfg.sigma_k.reset();
    cfg.ell.reset();
    return simulate_ensemble({p}, leader, init, cfg);
  }
  if (gp_override.size() < leader.size()) throw InvalidArgument("simulate: gp_override shorter than the horizon");
  cfg.validate();
  SimOutput out;
  out.mode = cfg.mode;
  out.dt = leader.dt;
  out.steps = leader.size();
  out.replicates.resize(cfg.replicates);
  for (std::size_t r = 0; r < cfg.replicates; ++r) {
    Rng rng(derive_seed(cfg.seed, r));
    std::vector<double> f(gp_override.begin(), gp_override.begin() + static_cast<std::ptrdiff_t>(leader.size()));
    if (sigma_eps.sigma_eps > 0.0) {
      std::normal_distribution<double> eps(0.0, sigma_eps.sigma_eps);
      for (auto& v : f) v += eps(rng);
    }
    out.replicates[r] = {rollout_forced(leader, init, theta, f), 0, derive_seed(cfg.seed, r)};
  }
  return out;
}

enum class Channel { A, V, S, X };

inline std::string to_string(Channel c) {
  switch (c) {
    case Channel::A: return "a";
    case Channel::V: return "v";
    case Channel::S: return "s";
    case Channel::X: return "x";
  }
  return "?";
}

inline Channel channel_from_string(const std::string& s) {
  if (s == "a") return Channel::A;
  if (s == "v") return Channel::V;
  if (s == "s") return Channel::S;
  if (s == "x") return Channel::X;
  throw InvalidArgument("unknown channel '" + s + "' (expected a|v|s|x)");
}

inline const std::vector<double>& channel_of(const Trajectory& tr, Channel c) {
  switch (c) {
    case Channel::A: return tr.a;
    case Channel::V: return tr.v;
    case Channel::S: return tr.s;
    case Channel::X: return tr.x;
  }
  throw InvalidArgument("bad channel");
}

inline constexpr std::array<double, 5> kEnvelopeProbs = {0.025, 0.25, 0.5, 0.75, 0.975};

/// Per-time quantiles over the replicates still running at that time;
/// rows are {t, q025, q25, q50, q75, q975}.
inline std::vector<std::array<double, 6>> quantile_envelope(const SimOutput& sim, Channel c) {
  std::vector<std::array<double, 6>> rows;
  std::vector<double> vals;
  for (std::size_t k = 0; k < sim.steps; ++k) {
    vals.clear();
    for (const auto& r : sim.replicates)
      if (k < r.traj.size()) vals.push_back(channel_of(r.traj, c)[k]);
    if (vals.empty()) break;
    std::sort(vals.begin(), vals.end());
    std::array<double, 6> row{};
    row[0] = static_cast<double>(k) * sim.dt;
    for (std::size_t q = 0; q < 5; ++q) {
      const double h = kEnvelopeProbs[q] * static_cast<double>(vals.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(h));
      const std::size_t hi = std::min(lo + 1, vals.size() - 1);
      row[q + 1] = vals[lo] + (h - static_cast<double>(lo)) * (vals[hi] - vals[lo]);
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace maidm
