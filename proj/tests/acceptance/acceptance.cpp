// Acceptance runner: one PASS/FAIL line per criterion.
//
//   maidm_acceptance --prepare --work DIR      synthesize data and run the shared fits
//   maidm_acceptance --criterion N --work DIR  evaluate one criterion (1..9)
//   maidm_acceptance [--work DIR]              prepare, then every criterion
//
// Exit status is 0 only when every evaluated criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "maidm/maidm.hpp"

namespace fs = std::filesystem;
using namespace maidm;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double x, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << x;
  return s.str();
}

double mean_of(const std::vector<double>& x) {
  double m = 0.0;
  for (double v : x) m += v;
  return m / static_cast<double>(x.size());
}

double posterior_mean(const PosteriorSamples& s, const std::string& name) { return mean_of(s.pooled(s.index(name))); }

// ---------------------------------------------------------------------------
// Shared synthetic data and fits

constexpr std::uint64_t kDataSeed = 20240611;
constexpr std::uint64_t kD8Seed = 777;
constexpr std::uint64_t kFitSeed = 4242;

SynthSpec single_driver_spec(std::uint64_t seed) {
  SynthSpec s;
  s.driver_id = "single";
  s.theta = IdmParams::recommended();
  s.noise = NoiseModel::MAIDM;
  s.sigma_eps = 0.1;
  s.sigma_k = 0.2;
  s.ell = 1.3;
  s.duration = 300.0;
  s.dt = 0.2;
  s.leader.kind = "stop_and_go";
  s.leader.v_high = 15.0;
  s.leader.v_low = 0.0;
  s.seed = seed;
  return s;
}

std::vector<SynthSpec> d8_specs() {
  SynthCommand sc;
  sc.base = single_driver_spec(0);
  sc.base.driver_id = "drv";
  sc.base.duration = 120.0;
  sc.num_drivers = 8;
  sc.theta_jitter = 0.2;
  sc.leader_offset_step = 5.0;
  sc.expand(kD8Seed, {});
  return sc.drivers;
}

SamplerConfig fit_sampler(std::uint64_t seed, std::size_t warmup, std::size_t draws) {
  SamplerConfig c;
  c.num_chains = 4;
  c.warmup_steps = warmup;
  c.draw_steps = draws;
  c.seed = seed;
  c.threads = 1;
  return c;
}

class Work {
 public:
  explicit Work(fs::path dir) : dir_(std::move(dir)) {}

  const fs::path& dir() const { return dir_; }

  Episode single_episode() { return load_or_make(dir_ / "data" / "single.csv", single_driver_spec(kDataSeed)); }

  std::vector<Episode> d8_episodes() {
    std::vector<Episode> eps;
    for (const auto& spec : d8_specs()) eps.push_back(load_or_make(dir_ / "data" / (spec.driver_id + ".csv"), spec));
    return eps;
  }

  PosteriorSamples single_fit(NoiseModel noise) {
    ModelSpec m;
    m.noise = noise;
    m.pooling = Pooling::Unpooled;
    m.num_drivers = 1;
    return fit("single_" + to_string(noise), m, {single_episode()});
  }

  PosteriorSamples d8_fit(Pooling pooling, NoiseModel noise = NoiseModel::MAIDM) {
    ModelSpec m;
    m.noise = noise;
    m.pooling = pooling;
    m.num_drivers = 8;
    // The hierarchical posterior mixes slowly in sigma0 and needs longer chains.
    const bool hier = pooling == Pooling::Hierarchical;
    return fit("d8_" + to_string(pooling) + "_" + to_string(noise), m, d8_episodes(), hier ? 15000 : 3000,
               hier ? 10000 : 2000);
  }

  /// Wall time of a fit recorded when it was computed.
  double fit_seconds(const std::string& key) const {
    const auto t = timings();
    if (!t.contains(key)) throw InvalidArgument("no timing recorded for fit '" + key + "'");
    return t[key].get<double>();
  }

 private:
  Episode load_or_make(const fs::path& path, const SynthSpec& spec) {
    if (!fs::exists(path)) {
      fs::create_directories(path.parent_path());
      save_episode_csv(synth_generate(spec).episode, path);
    }
    return load_episode_csv(path);
  }

  PosteriorSamples fit(const std::string& key, const ModelSpec& m, std::vector<Episode> eps, std::size_t warmup = 3000,
                       std::size_t draws = 2000) {
    const fs::path path = dir_ / "fits" / (key + ".csv");
    if (fs::exists(path)) return read_draws_csv(path);
    fs::create_directories(path.parent_path());
    std::cerr << "fitting " << key << " ..." << std::endl;
    const auto t0 = Clock::now();
    Posterior post(m, std::move(eps));
    const auto s = sample_posterior(post, fit_sampler(kFitSeed, warmup, draws));
    const double secs = seconds_since(t0);
    write_draws_csv(s, path);
    auto t = timings();
    t[key] = secs;
    csv::write_text(dir_ / "fits" / "timings.json", t.dump(2) + "\n");
    const auto sum = summarize(s);
    std::cerr << "  " << key << ": " << num(secs) << " s, max R-hat " << num(sum.max_rhat()) << std::endl;
    return s;
  }

  json timings() const {
    std::ifstream in(dir_ / "fits" / "timings.json");
    if (!in) return json::object();
    return json::parse(in);
  }

  fs::path dir_;
};

void prepare(Work& w) {
  fs::remove_all(w.dir());
  fs::create_directories(w.dir());
  w.single_episode();
  w.d8_episodes();
  w.single_fit(NoiseModel::MAIDM);
  w.single_fit(NoiseModel::BIDM);
  for (Pooling p : {Pooling::Hierarchical, Pooling::Unpooled, Pooling::Pooled}) w.d8_fit(p);
  w.d8_fit(Pooling::Pooled, NoiseModel::BIDM);
}

// ---------------------------------------------------------------------------
// Criterion 1: analytic oracles

double crps_midpoint_oracle(std::vector<double> ens, double y) {
  std::vector<double> nodes = ens;
  nodes.push_back(y);
  std::sort(nodes.begin(), nodes.end());
  const double n = static_cast<double>(ens.size());
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
    const double a = nodes[i], b = nodes[i + 1];
    if (!(b > a)) continue;
    const double h = (b - a) / 20.0;
    for (int k = 0; k < 20; ++k) {
      const double x = a + (k + 0.5) * h;
      double f = 0.0;
      for (double e : ens) f += e <= x ? 1.0 : 0.0;
      const double d = f / n - (x >= y ? 1.0 : 0.0);
      total += d * d * h;
    }
  }
  return total;
}

Outcome criterion1() {
  const auto t0 = Clock::now();
  std::vector<std::string> failures;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;

  // Squared-exponential kernel against its closed form.
  for (const KernelHyper h : {KernelHyper{0.2, 1.3}, KernelHyper{1.5, 0.4}}) {
    for (double d : {0.0, 0.2, 1.0, 3.7}) {
      const double ref = h.sigma_k * h.sigma_k * std::exp(-0.5 * d * d / (h.ell * h.ell));
      check(std::abs(se_kernel(1.0, 1.0 + d, h) - ref) <= 1e-12 * std::max(1.0, ref), "se_kernel");
    }
  }

  // MVN log density, dense and Toeplitz paths, against a naive inverse/determinant.
  {
    const std::size_t n = 60;
    const double dt = 0.2;
    const KernelHyper h{0.2, 1.3};
    const NoiseScale e{0.1};
    std::vector<double> times(n), y(n), mu(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      times[i] = static_cast<double>(i) * dt;
      y[i] = 0.03 * z(rng);
    }
    const Eigen::MatrixXd k = gram_matrix(times, h);
    Eigen::MatrixXd sigma = (k + e.sigma_eps * e.sigma_eps * Eigen::MatrixXd::Identity(n, n)) * dt * dt;
    const Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(n));
    const double naive = -0.5 * yv.dot(sigma.inverse() * yv) - 0.5 * std::log(sigma.determinant()) -
                         0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
    const double dense = mvn_logpdf(y, mu, assemble_speed_cov(k, e, dt));
    const double toep = StationaryFactor::build(speed_autocov(n, dt, h, e), 0.0).logpdf(y);
    check(std::abs(dense - naive) <= 1e-8 * std::abs(naive), "mvn_logpdf dense " + num(dense - naive));
    check(std::abs(toep - naive) <= 1e-8 * std::abs(naive), "mvn_logpdf toeplitz " + num(toep - naive));
  }

  // CRPS against midpoint quadrature on a breakpoint grid.
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> ens(1 + static_cast<std::size_t>(rep));
    for (auto& v : ens) v = 2.0 * z(rng);
    const double y = z(rng);
    check(std::abs(crps_empirical(ens, y) - crps_midpoint_oracle(ens, y)) <= 1e-6, "crps vs quadrature");
    check(std::abs(crps_empirical(ens, y) - crps_energy(ens, y)) <= 1e-12, "crps energy form");
  }
  check(crps_empirical({0.0, 1.0}, 0.5) == 0.25, "crps hand example");

  // RMSE: exact copies and a unit offset.
  {
    SynthSpec s = single_driver_spec(3);
    s.duration = 60.0;
    const Episode ep = synth_generate(s).episode;
    SimOutput sim;
    sim.dt = ep.dt();
    sim.steps = ep.size();
    Trajectory tr;
    tr.dt = ep.dt();
    tr.t = ep.t();
    tr.x = ep.x();
    tr.v = ep.v();
    tr.s = ep.s();
    tr.a = ep.accel();
    sim.replicates.push_back({tr, 0, 0});
    for (auto& v : tr.v) v += 1.0;
    sim.replicates.push_back({tr, 0, 1});
    const auto r = rmse_ensemble(sim, ep, Channel::S);
    check(r.mean == 0.0 && r.sd == 0.0, "rmse of exact copies");
    const auto rv = rmse_ensemble(sim, ep, Channel::V);
    check(std::abs(rv.mean - 0.5) <= 1e-12, "rmse unit offset mean");
  }

  // Edie aggregation: q = rho * u per cell, and total presence time equals N * T.
  {
    RingConfig cfg;
    cfg.duration = 600.0;
    cfg.mode = SimMode::StochBIDM;
    const auto out = ring_simulate(cfg, IdmParams::recommended(), 5, 0.3);
    const auto fd = fundamental_diagram(out, 60.0, 8);
    double presence = 0.0;
    for (const auto& p : fd) {
      check(p.flow == p.density * p.speed * 3.6, "edie q = rho u");
      presence += p.density / 1000.0 * (out.circumference / 8.0) * 60.0;
    }
    const double expected = static_cast<double>(out.num_vehicles) * 600.0;
    check(std::abs(presence - expected) <= 1e-9 * expected, "edie presence total " + num(presence - expected));
  }

  // IDM equilibrium: zero acceleration on the equilibrium gap, and the inverse map.
  for (double v : {0.5, 5.0, 11.6, 25.0}) {
    const IdmParams p = IdmParams::recommended();
    const double s = equilibrium_gap(v, p);
    check(std::abs(idm_acceleration({s, v, 0.0}, p)) <= 1e-10, "idm equilibrium acceleration at v=" + num(v));
    check(std::abs(equilibrium_speed(s, p) - v) <= 1e-9 * std::max(1.0, v), "idm equilibrium inverse");
  }

  const double secs = seconds_since(t0);
  check(secs < 30.0, "runtime " + num(secs) + " s");
  Outcome o;
  o.pass = failures.empty();
  o.detail = "oracle suite in " + num(secs, 3) + " s";
  for (const auto& f : failures) o.detail += "; failed: " + f;
  return o;
}

// ---------------------------------------------------------------------------
// Criterion 2: sampler validity on analytic targets

Outcome criterion2() {
  SamplerConfig cfg;
  cfg.num_chains = 4;
  cfg.warmup_steps = 2000;
  cfg.draw_steps = 5000;
  cfg.seed = 99;
  cfg.threads = 1;
  cfg.initial_scale = 0.5;
  std::vector<std::vector<double>> init1 = {{-1.0}, {0.0}, {1.0}, {2.0}};
  std::vector<std::vector<double>> init2 = {{-1.0, 1.0}, {0.0, 0.0}, {1.0, -1.0}, {2.0, 2.0}};

  // y_i ~ N(mu, 1), mu ~ N(2, 3^2).
  const std::vector<double> y = {1.2, 0.7, 2.9, 1.8, 1.1, 2.4, 0.3, 1.6};
  const double prior_m = 2.0, prior_v = 9.0;
  auto conj = [&](std::span<const double> m) {
    double lp = -0.5 * (m[0] - prior_m) * (m[0] - prior_m) / prior_v;
    for (double v : y) lp -= 0.5 * (v - m[0]) * (v - m[0]);
    return lp;
  };
  const double post_v = 1.0 / (1.0 / prior_v + static_cast<double>(y.size()));
  double sum = 0.0;
  for (double v : y) sum += v;
  const double post_m = post_v * (prior_m / prior_v + sum);

  const auto t0 = Clock::now();
  const auto a = run_chains(conj, init1, cfg);
  const double secs_conj = seconds_since(t0);
  const auto xa = a.pooled(0);
  const double m = mean_of(xa);
  double var = 0.0;
  for (double v : xa) var += (v - m) * (v - m);
  var /= static_cast<double>(xa.size() - 1);
  const double ess_a = ess(a.per_chain(0));
  const double mcse = std::sqrt(var / ess_a);
  const bool conj_ok = std::abs(m - post_m) < 3.0 * mcse;
  const double rhat_a = rhat(a.per_chain(0));

  const double rho = 0.8;
  auto corr = [rho](std::span<const double> x) {
    return -0.5 * (x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1]) / (1.0 - rho * rho);
  };
  const auto t1 = Clock::now();
  const auto b = run_chains(corr, init2, cfg);
  const double secs_corr = seconds_since(t1);
  const auto u = b.pooled(0), v = b.pooled(1);
  const double mu = mean_of(u), mv = mean_of(v);
  double cuv = 0.0, cuu = 0.0, cvv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cuv += (u[i] - mu) * (v[i] - mv);
    cuu += (u[i] - mu) * (u[i] - mu);
    cvv += (v[i] - mv) * (v[i] - mv);
  }
  const double r_hat_corr = cuv / std::sqrt(cuu * cvv);
  const bool corr_ok = std::abs(r_hat_corr - rho) <= 0.05;
  const double rhat_b = std::max(rhat(b.per_chain(0)), rhat(b.per_chain(1)));
  const bool rhat_ok = rhat_a < 1.01 && rhat_b < 1.01;
  const bool time_ok = secs_conj < 60.0 && secs_corr < 60.0;

  Outcome o;
  o.pass = conj_ok && corr_ok && rhat_ok && time_ok;
  o.detail = "conjugate mean " + num(m, 5) + " vs " + num(post_m, 5) + " (3 MCSE = " + num(3.0 * mcse, 3) +
             "); correlation " + num(r_hat_corr, 4) + " vs 0.8; R-hat " + num(rhat_a, 4) + " / " + num(rhat_b, 4) +
             "; 4x5000 draws in " + num(secs_conj, 3) + " s / " + num(secs_corr, 3) + " s";
  return o;
}

// ---------------------------------------------------------------------------
// Criteria 3 and 4: single-driver recovery and bias decoupling

IdmParams theta_mean(const PosteriorSamples& s, const std::string& sfx) {
  std::array<double, 5> a{};
  for (std::size_t i = 0; i < 5; ++i) a[i] = posterior_mean(s, std::string(kThetaNames[i]) + sfx);
  return IdmParams::from_array(a, 4.0, 0.0);
}

Outcome criterion3(Work& w) {
  const auto s = w.single_fit(NoiseModel::MAIDM);
  const IdmParams truth = IdmParams::recommended();
  const IdmParams est = theta_mean(s, "[0]");
  const auto ta = truth.to_array(), ea = est.to_array();
  bool ok = true;
  std::string detail;
  for (std::size_t i = 1; i < 5; ++i) {
    const double rel = std::abs(ea[i] - ta[i]) / ta[i];
    ok = ok && rel <= 0.15;
    detail += std::string(kThetaNames[i]) + " " + num(ea[i]) + " (" + num(100.0 * rel, 3) + "%) ";
  }
  const double se = posterior_mean(s, "sigma_eps");
  const double ell = posterior_mean(s, "ell");
  const double ell_rel = std::abs(ell - 1.3) / 1.3;
  const bool se_ok = se >= 0.07 && se <= 0.13;
  const bool ell_ok = ell_rel <= 0.30;
  const double secs = w.fit_seconds("single_maidm");
  const bool time_ok = secs < 600.0;
  const auto sum = summarize(s);
  Outcome o;
  o.pass = ok && se_ok && ell_ok && time_ok;
  o.detail = detail + "sigma_eps " + num(se) + " ell " + num(ell) + " (" + num(100.0 * ell_rel, 3) + "%) v0 " +
             num(ea[0]) + " (not scored); fit " + num(secs, 4) + " s; max R-hat " + num(sum.max_rhat());
  return o;
}

Outcome criterion4(Work& w) {
  const Episode ep = w.single_episode();
  const auto b = w.single_fit(NoiseModel::BIDM);
  const auto m = w.single_fit(NoiseModel::MAIDM);

  const double se_b = posterior_mean(b, "sigma_eps");
  const auto r_b = one_step_residuals(theta_mean(b, "[0]"), ep);
  const double lag1_b = residual_autocorr(r_b, 1)[0];

  const double se_m = posterior_mean(m, "sigma_eps");
  const KernelHyper h{posterior_mean(m, "sigma_k"), posterior_mean(m, "ell")};
  const auto r_m = one_step_residuals(theta_mean(m, "[0]"), ep);
  const double dt = ep.dt();
  const auto factor = StationaryFactor::build(speed_autocov(r_m.size(), dt, h, {se_m}), h.sigma_k * h.sigma_k * dt * dt);
  const double lag1_m = residual_autocorr(factor.whiten(r_m), 1)[0];

  Outcome o;
  o.pass = se_b > 1.5 * 0.1 && lag1_b > 0.5 && lag1_m < 0.2 && se_m >= 0.07 && se_m <= 0.13;
  o.detail = "B-IDM sigma_eps " + num(se_b) + ", residual lag-1 " + num(lag1_b) + "; MA-IDM sigma_eps " + num(se_m) +
             ", whitened lag-1 " + num(lag1_m);
  return o;
}

// ---------------------------------------------------------------------------
// Criteria 5 and 6: D = 8 hierarchical fit

Outcome criterion5(Work& w) {
  const auto sum = summarize(w.d8_fit(Pooling::Hierarchical));
  Eigen::Matrix<double, 5, 5> c = Eigen::Matrix<double, 5, 5>::Zero();
  std::size_t groups = 0;
  for (std::size_t g = 0; g < sum.theta_groups.size(); ++g)
    if (sum.theta_groups[g].starts_with("[")) {
      c += sum.theta_corr_groups[g];
      ++groups;
    }
  if (groups == 0) return {false, "no per-driver theta groups in the hierarchical draws"};
  c /= static_cast<double>(groups);
  // (i, j, expected sign) with v0=0, s0=1, T=2, alpha=3, beta=4.
  const std::array<std::tuple<int, int, int>, 5> pairs = {
      std::tuple{2, 3, 1}, std::tuple{2, 4, 1}, std::tuple{3, 4, 1}, std::tuple{0, 1, -1}, std::tuple{1, 2, -1}};
  int hits = 0;
  std::string detail;
  for (const auto& [i, j, sign] : pairs) {
    const double r = c(i, j);
    const bool hit = r * sign > 0.1;
    hits += hit ? 1 : 0;
    detail += std::string("(") + kThetaNames[static_cast<std::size_t>(i)] + "," + kThetaNames[static_cast<std::size_t>(j)] +
              ") " + num(r, 3) + (hit ? " ok; " : " miss; ");
  }
  Outcome o;
  o.pass = hits >= 4;
  o.detail = std::to_string(hits) + "/5 pairs: " + detail + "mean over " + std::to_string(groups) + " drivers";
  return o;
}

Outcome criterion6(Work& w) {
  const auto h = w.d8_fit(Pooling::Hierarchical);
  const auto u = w.d8_fit(Pooling::Unpooled);
  const auto p = w.d8_fit(Pooling::Pooled);
  int between = 0, total = 0;
  std::array<int, 5> per_param{};
  for (std::size_t d = 0; d < 8; ++d)
    for (std::size_t i = 0; i < 5; ++i) {
      const std::string name = std::string(kThetaNames[i]) + "[" + std::to_string(d) + "]";
      const double hm = posterior_mean(h, name), um = posterior_mean(u, name);
      const double pm = posterior_mean(p, kThetaNames[i]);
      const bool in = hm >= std::min(um, pm) && hm <= std::max(um, pm);
      between += in ? 1 : 0;
      per_param[i] += in ? 1 : 0;
      ++total;
    }
  const double frac = static_cast<double>(between) / total;
  Outcome o;
  o.pass = frac >= 0.7;
  o.detail = std::to_string(between) + "/" + std::to_string(total) + " cells shrunk (" + num(100.0 * frac, 3) + "%); per parameter";
  for (std::size_t i = 0; i < 5; ++i) o.detail += std::string(" ") + kThetaNames[i] + " " + std::to_string(per_param[i]) + "/8";
  return o;
}

// ---------------------------------------------------------------------------
// Criterion 7: stochastic simulation CRPS ordering

Outcome criterion7(Work& w) {
  const auto m = w.single_fit(NoiseModel::MAIDM);
  const auto b = w.single_fit(NoiseModel::BIDM);
  constexpr std::size_t kTrials = 10, kReplicates = 500;
  int wins = 0;
  std::string detail;
  double ma_v = 0, bi_v = 0, ma_s = 0, bi_s = 0;
  for (std::size_t j = 0; j < kTrials; ++j) {
    const Episode truth = synth_generate(single_driver_spec(derive_seed(9000, j))).episode;
    auto score = [&](const PosteriorSamples& draws, SimMode mode, double& v_acc, double& s_acc) {
      SimConfig cfg;
      cfg.mode = mode;
      cfg.replicates = kReplicates;
      cfg.seed = derive_seed(9100, j);
      cfg.threads = 1;
      const auto sets = sample_parameter_sets(draws, kReplicates, cfg.seed, {});
      const auto sim = simulate_ensemble(sets, prepare_leader(truth, cfg), truth.initial_state(), cfg);
      const double v = crps_series(sim, truth, Channel::V).mean;
      const double s = crps_series(sim, truth, Channel::S).mean;
      v_acc += v;
      s_acc += s;
      return std::pair{v, s};
    };
    const auto [mv, ms] = score(m, SimMode::StochMAIDM, ma_v, ma_s);
    const auto [bv, bs] = score(b, SimMode::StochBIDM, bi_v, bi_s);
    const bool win = mv < bv && ms < bs;
    wins += win ? 1 : 0;
    detail += win ? "+" : "-";
  }
  const double n = static_cast<double>(kTrials);
  Outcome o;
  o.pass = wins >= 8;
  o.detail = std::to_string(wins) + "/10 trials with MA-IDM lower on both [" + detail + "]; mean CRPS(v) " +
             num(ma_v / n) + " vs " + num(bi_v / n) + ", CRPS(s) " + num(ma_s / n) + " vs " + num(bi_s / n);
  return o;
}

// ---------------------------------------------------------------------------
// Criterion 8: ring road

bool count_conserved(const RingOutput& out, const RingConfig& cfg, std::string& why) {
  if (out.num_vehicles != cfg.num_vehicles) {
    why = "vehicle count changed";
    return false;
  }
  if (out.collided || out.num_steps != cfg.num_steps()) {
    why = "run truncated by a collision at step " + std::to_string(out.collision_step);
    return false;
  }
  if (out.x.size() != out.num_steps * out.num_vehicles) {
    why = "state array size mismatch";
    return false;
  }
  for (std::size_t k = 0; k < out.num_steps; ++k) {
    double total = 0.0;
    for (std::size_t i = 0; i < out.num_vehicles; ++i) total += out.at_s(k, i);
    total += static_cast<double>(out.num_vehicles) * cfg.vehicle_length;
    if (std::abs(total - cfg.circumference()) > 1e-6) {
      why = "gaps no longer close the ring at step " + std::to_string(k);
      return false;
    }
  }
  return true;
}

Outcome criterion8(Work& w) {
  std::vector<std::string> failures;
  const RingConfig base;  // 128 m radius, 37 vehicles, 11.6 m/s, 3000 s, 0.5 s
  constexpr std::uint64_t kSeed = 31;

  RingConfig det = base;
  det.mode = SimMode::Deterministic;
  const auto sym = ring_simulate(det, IdmParams::recommended(), kSeed);
  std::string why;
  if (!count_conserved(sym, det, why)) failures.push_back("deterministic: " + why);
  double worst = 0.0;
  for (std::size_t k = 0; k < sym.num_steps; ++k)
    for (std::size_t i = 1; i < sym.num_vehicles; ++i) worst = std::max(worst, std::abs(sym.at_s(k, i) - sym.at_s(k, 0)));
  if (worst > 1e-6) failures.push_back("equal gaps broken by " + num(worst));

  const auto draws = w.d8_fit(Pooling::Hierarchical);
  RingConfig stoch = base;
  stoch.mode = SimMode::StochMAIDM;
  const auto hetero_sets =
      sample_parameter_sets(draws, base.num_vehicles, kSeed, {ParamSource::Kind::NewDriver, 0});
  const auto t0 = Clock::now();
  const auto hetero = ring_simulate(stoch, hetero_sets, kSeed);
  const double secs = seconds_since(t0);
  if (secs >= 120.0) failures.push_back("default run took " + num(secs) + " s");
  if (!count_conserved(hetero, stoch, why)) failures.push_back("heterogeneous: " + why);

  // Baseline: every vehicle shares the pooled B-IDM posterior mean, with white noise.
  RingConfig white = base;
  white.mode = SimMode::StochBIDM;
  const ParameterSet mean_set = posterior_mean_set(w.d8_fit(Pooling::Pooled, NoiseModel::BIDM));
  const auto homo = ring_simulate(white, std::vector<ParameterSet>{mean_set}, kSeed);
  if (!count_conserved(homo, white, why)) failures.push_back("homogeneous: " + why);

  const double late = base.duration - 1000.0;
  const double var_het = hetero.mean_speed_variance_from(late);
  const double var_hom = homo.mean_speed_variance_from(late);
  if (!(var_het > var_hom)) failures.push_back("late speed variance not larger for heterogeneous drivers");

  const fs::path fd_path = w.dir() / "ring" / "fd.csv";
  fs::create_directories(fd_path.parent_path());
  write_fd_csv(fundamental_diagram(hetero, 60.0, 8), fd_path);
  const auto tab = csv::read(fd_path);
  if (tab.rows.empty()) failures.push_back("fundamental diagram is empty");
  const auto cd = tab.column("density"), cq = tab.column("flow"), cu = tab.column("speed");
  std::size_t bad = 0;
  for (std::size_t r = 0; r < tab.rows.size(); ++r)
    if (tab.number(r, cq) != tab.number(r, cd) * tab.number(r, cu) * 3.6) ++bad;
  if (bad) failures.push_back(std::to_string(bad) + " cells violate q = rho u");

  Outcome o;
  o.pass = failures.empty();
  o.detail = "default stochastic run " + num(secs, 3) + " s; symmetric gap spread " + num(worst, 3) +
             "; late speed variance heterogeneous MA-IDM " + num(var_het) + " vs homogeneous B-IDM " + num(var_hom) +
             " (sigma_eps " + num(mean_set.sigma_eps) + "); " +
             std::to_string(tab.rows.size()) + " FD cells";
  for (const auto& f : failures) o.detail += "; failed: " + f;
  return o;
}

// ---------------------------------------------------------------------------
// Criterion 9: CLI reproducibility

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MAIDM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

void write_tracks(const fs::path& path) {
  std::ofstream f(path);
  f << "frame,id,precedingId,x,xVelocity,width,class\n";
  double xl = 40.0, xf = 0.0;
  for (int k = 0; k <= 1600; ++k) {
    const double t = k / 25.0;
    const double vl = 14.0 + 3.0 * std::sin(0.2 * t), vf = 14.0 + 2.5 * std::sin(0.2 * t - 0.4);
    f << k << ",1,0," << csv::fmt(xl) << ',' << csv::fmt(vl) << ",4.5,Car\n";
    f << k << ",2,1," << csv::fmt(xf) << ',' << csv::fmt(vf) << ",4.8,Car\n";
    xl += vl / 25.0;
    xf += vf / 25.0;
  }
}

Outcome criterion9(const fs::path& work) {
  const fs::path dir = work / "cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto write = [&](const std::string& name, const json& j) {
    csv::write_text(dir / name, j.dump(2) + "\n");
    return (dir / name).string();
  };
  write_tracks(dir / "tracks.csv");
  const std::string synth = write("synth.json", json::parse(R"({
    "seed": 3, "synth": {"num_drivers": 2, "theta_jitter": 0.1,
      "template": {"driver_id": "car", "duration": 60, "noise": "maidm"}}})"));
  const std::string extract = write("extract.json", json::parse(R"({"extract": {"tracks": "tracks.csv"}})"));
  const std::string calibrate = write("calibrate.json", json::parse(R"({
    "seed": 4, "calibrate": {"episodes": ["synth_a/car_0.csv", "synth_a/car_1.csv"],
      "model": {"noise": "maidm", "pooling": "hierarchical"},
      "sampler": {"num_chains": 2, "warmup_steps": 1000, "draw_steps": 200}}})"));
  const std::string simulate = write("simulate.json", json::parse(R"({
    "seed": 5, "simulate": {"draws": "calibrate_a/draws.csv", "episode": "synth_a/car_0.csv",
      "mode": "stoch_maidm", "replicates": 40, "source": "new_driver", "output": "both"}})"));
  const std::string evaluate = write("evaluate.json", json::parse(R"({
    "evaluate": {"sim_dir": "simulate_a/replicates", "episode": "synth_a/car_0.csv"}})"));
  const std::string ring = write("ring.json", json::parse(R"({
    "seed": 6, "ring": {"mode": "stoch_maidm", "source": "posterior", "draws": "calibrate_a/draws.csv",
      "param_source": "new_driver", "duration": 300}})"));

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", synth}, {"extract", extract}, {"calibrate", calibrate},
      {"simulate", simulate}, {"evaluate", evaluate}, {"ring", ring}};
  std::vector<std::string> failures;
  std::size_t files = 0;
  for (const auto& [cmd, cfg] : commands) {
    const fs::path a = dir / (cmd + "_a"), b = dir / (cmd + "_b");
    // --force keeps the short calibration from stopping on its R-hat check.
    const int ra = run_cli(cmd + " --force --config " + cfg + " --out " + a.string());
    const int rb = run_cli(cmd + " --force --config " + cfg + " --out " + b.string());
    if (ra != 0 || rb != 0) {
      failures.push_back(cmd + " exited " + std::to_string(ra) + "/" + std::to_string(rb));
      continue;
    }
    const auto ta = tree(a), tb = tree(b);
    if (ta.empty()) failures.push_back(cmd + " wrote nothing");
    if (ta != tb) failures.push_back(cmd + " outputs differ");
    files += ta.size();
  }
  Outcome o;
  o.pass = failures.empty();
  o.detail = std::to_string(commands.size()) + " commands, " + std::to_string(files) + " files compared byte for byte";
  for (const auto& f : failures) o.detail += "; failed: " + f;
  return o;
}

// ---------------------------------------------------------------------------

Outcome run_criterion(int n, Work& w) {
  switch (n) {
    case 1: return criterion1();
    case 2: return criterion2();
    case 3: return criterion3(w);
    case 4: return criterion4(w);
    case 5: return criterion5(w);
    case 6: return criterion6(w);
    case 7: return criterion7(w);
    case 8: return criterion8(w);
    case 9: return criterion9(w.dir());
  }
  throw InvalidArgument("criterion must be 1..9");
}

bool report(int n, Work& w) {
  Outcome o;
  try {
    o = run_criterion(n, w);
  } catch (const std::exception& e) {
    o = {false, std::string("error: ") + e.what()};
  }
  std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail << std::endl;
  return o.pass;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "maidm_acceptance";
  bool do_prepare = false;
  std::vector<int> criteria;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--prepare") {
      do_prepare = true;
    } else if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--criterion" && i + 1 < argc) {
      criteria.push_back(std::atoi(argv[++i]));
    } else {
      std::cerr << "usage: maidm_acceptance [--prepare] [--criterion N]... [--work DIR]\n";
      return 2;
    }
  }
  const bool all = !do_prepare && criteria.empty();
  Work w(work);
  if (do_prepare || all) {
    try {
      prepare(w);
    } catch (const std::exception& e) {
      std::cerr << "prepare failed: " << e.what() << "\n";
      return 1;
    }
  }
  if (all)
    for (int n = 1; n <= 9; ++n) criteria.push_back(n);
  bool ok = true;
  for (int n : criteria) ok = report(n, w) && ok;
  return ok ? 0 : 1;
}
