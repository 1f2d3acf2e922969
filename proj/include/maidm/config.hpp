#pragma once

// Run configuration: a JSON document with a versioned schema. Every key is
// optional and falls back to the documented default; unknown keys are errors.
// Relative paths resolve against the directory of the config file.
//
//   {
//     "schema_version": 1, "seed": 7, "threads": 1,
//     "synth":     { "num_drivers", "theta_jitter", "leader_offset_step", "template": {...}, "drivers": [...] },
//     "extract":   { "tracks", "frame_rate", "min_duration", "resample_dt" },
//     "calibrate": { "episodes": [...], "resample_dt", "max_duration", "rhat_threshold",
//                    "model": { "noise", "pooling", "priors": {...}, "fixed_sigma0" },
//                    "sampler": { "kind", "num_chains", "warmup_steps", "draw_steps", ... } },
//     "simulate":  { "draws", "episode", "mode", "replicates", "source", "output", "probe_times", ... },
//     "ring":      { "radius", "num_vehicles", ..., "source", "theta", "draws", "param_source", "fd_window" },
//     "evaluate":  { "sim_dir", "episode", "probe_times", "resample_dt" }
//   }

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "maidm/diagnostics.hpp"
#include "maidm/error.hpp"
#include "maidm/mcmc.hpp"
#include "maidm/model.hpp"
#include "maidm/ring.hpp"
#include "maidm/simulate.hpp"
#include "maidm/synth.hpp"

namespace maidm {

inline constexpr int kConfigSchemaVersion = 1;

using json = nlohmann::json;

namespace config_detail {

/// Reads keys of one JSON object and rejects the ones never asked for.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InvalidArgument("config: '" + display() + "' must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  template <class T>
  T get(const std::string& key, T def) {
    if (!has(key)) return def;
    return as<T>(key);
  }

  template <class T>
  std::optional<T> opt(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return as<T>(key);
  }

  template <class T>
  T as(const std::string& key) {
    seen_.insert(key);
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw InvalidArgument("config: '" + sub(key) + "' has the wrong type");
    }
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  Reader child(const std::string& key) {
    seen_.insert(key);
    return Reader(j_.at(key), sub(key));
  }

  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw InvalidArgument("config: unknown key '" + sub(k) + "'");
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

inline IdmParams read_theta(Reader r, IdmParams def) {
  def.v0 = r.get("v0", def.v0);
  def.s0 = r.get("s0", def.s0);
  def.T = r.get("T", def.T);
  def.alpha = r.get("alpha", def.alpha);
  def.beta = r.get("beta", def.beta);
  def.delta = r.get("delta", def.delta);
  def.s1 = r.get("s1", def.s1);
  r.finish();
  def.validate();
  return def;
}

inline json theta_json(const IdmParams& p) {
  return {{"v0", p.v0}, {"s0", p.s0}, {"T", p.T}, {"alpha", p.alpha}, {"beta", p.beta}, {"delta", p.delta}, {"s1", p.s1}};
}

inline LeaderProfile read_leader(Reader r, LeaderProfile d) {
  d.kind = r.get("kind", d.kind);
  d.v_high = r.get("v_high", d.v_high);
  d.v_low = r.get("v_low", d.v_low);
  d.v_mean = r.get("v_mean", d.v_mean);
  d.amplitude = r.get("amplitude", d.amplitude);
  d.period = r.get("period", d.period);
  d.phase = r.get("phase", d.phase);
  d.accel = r.get("accel", d.accel);
  d.decel = r.get("decel", d.decel);
  d.hold_high = r.get("hold_high", d.hold_high);
  d.hold_low = r.get("hold_low", d.hold_low);
  d.ramp_time = r.get("ramp_time", d.ramp_time);
  d.start_offset = r.get("start_offset", d.start_offset);
  r.finish();
  d.validate();
  return d;
}

inline json leader_json(const LeaderProfile& d) {
  return {{"kind", d.kind},         {"v_high", d.v_high}, {"v_low", d.v_low},         {"v_mean", d.v_mean},
          {"amplitude", d.amplitude}, {"period", d.period}, {"phase", d.phase},         {"accel", d.accel},
          {"decel", d.decel},       {"hold_high", d.hold_high}, {"hold_low", d.hold_low}, {"ramp_time", d.ramp_time},
          {"start_offset", d.start_offset}};
}

inline SynthSpec read_synth_spec(Reader r, SynthSpec d) {
  d.driver_id = r.get("driver_id", d.driver_id);
  if (r.has("vehicle_class")) d.vehicle_class = vehicle_class_from_string(r.as<std::string>("vehicle_class"));
  if (r.has("theta")) d.theta = read_theta(r.child("theta"), d.theta);
  if (r.has("noise")) d.noise = noise_model_from_string(r.as<std::string>("noise"));
  d.sigma_eps = r.get("sigma_eps", d.sigma_eps);
  d.sigma_k = r.get("sigma_k", d.sigma_k);
  d.ell = r.get("ell", d.ell);
  if (r.has("leader")) d.leader = read_leader(r.child("leader"), d.leader);
  d.duration = r.get("duration", d.duration);
  d.dt = r.get("dt", d.dt);
  d.leader_length = r.get("leader_length", d.leader_length);
  if (r.has("initial_speed")) d.initial_speed = r.as<double>("initial_speed");
  if (r.has("initial_gap")) d.initial_gap = r.as<double>("initial_gap");
  r.finish();
  return d;
}

inline json synth_spec_json(const SynthSpec& s) {
  json j = {{"driver_id", s.driver_id},   {"vehicle_class", to_string(s.vehicle_class)},
            {"theta", theta_json(s.theta)}, {"noise", to_string(s.noise)},
            {"sigma_eps", s.sigma_eps},   {"sigma_k", s.sigma_k},
            {"ell", s.ell},               {"leader", leader_json(s.leader)},
            {"duration", s.duration},     {"dt", s.dt},
            {"leader_length", s.leader_length}, {"seed", s.seed}};
  j["initial_speed"] = s.initial_speed ? json(*s.initial_speed) : json(nullptr);
  j["initial_gap"] = s.initial_gap ? json(*s.initial_gap) : json(nullptr);
  return j;
}

inline PriorConfig read_priors(Reader r) {
  PriorConfig p;
  if (r.has("mu0")) {
    const auto v = r.as<std::vector<double>>("mu0");
    if (v.size() != 5) throw InvalidArgument("config: '" + r.sub("mu0") + "' must have 5 entries");
    std::copy(v.begin(), v.end(), p.mu0.begin());
  }
  if (r.has("Sigma0")) {
    const auto m = r.as<std::vector<std::vector<double>>>("Sigma0");
    if (m.size() != 5) throw InvalidArgument("config: '" + r.sub("Sigma0") + "' must be 5x5");
    for (int i = 0; i < 5; ++i) {
      if (m[static_cast<std::size_t>(i)].size() != 5) throw InvalidArgument("config: '" + r.sub("Sigma0") + "' must be 5x5");
      for (int k = 0; k < 5; ++k) p.Sigma0(i, k) = m[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    }
  }
  p.mu_eps = r.get("mu_eps", p.mu_eps);
  p.sigma1 = r.get("sigma1", p.sigma1);
  p.mu_k = r.get("mu_k", p.mu_k);
  p.sigma2 = r.get("sigma2", p.sigma2);
  p.mu_ell = r.get("mu_ell", p.mu_ell);
  p.sigma_ell = r.get("sigma_ell", p.sigma_ell);
  p.lambda = r.get("lambda", p.lambda);
  p.eta = r.get("eta", p.eta);
  r.finish();
  p.validate();
  return p;
}

inline json priors_json(const PriorConfig& p) {
  json sig = json::array();
  for (int i = 0; i < 5; ++i) {
    json row = json::array();
    for (int k = 0; k < 5; ++k) row.push_back(p.Sigma0(i, k));
    sig.push_back(row);
  }
  return {{"mu0", p.mu0},       {"Sigma0", sig},       {"mu_eps", p.mu_eps},       {"sigma1", p.sigma1},
          {"mu_k", p.mu_k},     {"sigma2", p.sigma2},  {"mu_ell", p.mu_ell},       {"sigma_ell", p.sigma_ell},
          {"lambda", p.lambda}, {"eta", p.eta}};
}

inline std::string sampler_string(GpSampler g) {
  return g == GpSampler::Auto ? "auto" : (g == GpSampler::Exact ? "exact" : "spectral");
}

inline GpSampler gp_sampler_from_string(const std::string& s) {
  if (s == "auto") return GpSampler::Auto;
  if (s == "exact") return GpSampler::Exact;
  if (s == "spectral") return GpSampler::Spectral;
  throw InvalidArgument("unknown gp_sampler '" + s + "' (expected auto|exact|spectral)");
}

inline json opt_json(const std::optional<double>& x) { return x ? json(*x) : json(nullptr); }

inline std::string param_source_string(const ParamSource& s) {
  switch (s.kind) {
    case ParamSource::Kind::Auto: return "auto";
    case ParamSource::Kind::Pooled: return "pooled";
    case ParamSource::Kind::Driver: return "driver:" + std::to_string(s.driver);
    case ParamSource::Kind::Population: return "population";
    case ParamSource::Kind::NewDriver: return "new_driver";
  }
  return "auto";
}

}  // namespace config_detail

struct SynthCommand {
  SynthSpec base;
  std::size_t num_drivers = 1;
  double theta_jitter = 0.0;        ///< log-scale sd of per-driver theta perturbation
  double leader_offset_step = 0.0;  ///< seconds added to the leader cycle offset per driver
  std::vector<SynthSpec> drivers;   ///< expanded per-driver specs

  /// Driver d: seed derive_seed(seed, d); theta_i *= exp(jitter z_i) with z from make_rng(seed, 1000000 + d).
  void expand(std::uint64_t seed, const std::vector<std::optional<SynthSpec>>& overrides) {
    if (num_drivers < 1) throw InvalidArgument("synth: num_drivers must be >= 1");
    if (!(theta_jitter >= 0.0)) throw InvalidArgument("synth: theta_jitter must be >= 0");
    drivers.clear();
    for (std::size_t d = 0; d < num_drivers; ++d) {
      SynthSpec s = d < overrides.size() && overrides[d] ? *overrides[d] : base;
      if (!(d < overrides.size() && overrides[d]) && num_drivers > 1) s.driver_id = base.driver_id + "_" + std::to_string(d);
      s.seed = derive_seed(seed, d);
      if (theta_jitter > 0.0) {
        Rng rng = make_rng(seed, 1000000 + d);
        std::normal_distribution<double> z(0.0, theta_jitter);
        auto a = s.theta.to_array();
        for (auto& v : a) v *= std::exp(z(rng));
        s.theta = IdmParams::from_array(a, s.theta.delta, s.theta.s1);
      }
      s.leader.start_offset += static_cast<double>(d) * leader_offset_step;
      s.validate();
      drivers.push_back(s);
    }
  }
};

struct ExtractCommand {
  std::filesystem::path tracks;
  double frame_rate = 25.0;
  double min_duration = 50.0;
  std::optional<double> resample_dt = 0.2;
};

struct CalibrateCommand {
  std::vector<std::filesystem::path> episodes;
  std::optional<double> resample_dt;
  std::optional<double> max_duration;  ///< keep only the first seconds of every episode
  ModelSpec model;
  SamplerConfig sampler;
  double rhat_threshold = 1.05;
};

struct SimulateCommand {
  std::filesystem::path draws;
  std::filesystem::path episode;
  SimConfig sim;
  ParamSource source;
  std::string output = "trajectories";  ///< trajectories | envelope | both
  std::optional<std::vector<double>> probe_times;
};

struct RingCommand {
  RingConfig ring;
  std::string source = "fixed";  ///< fixed | posterior
  IdmParams theta;
  double sigma_eps = 0.0;
  std::filesystem::path draws;
  ParamSource param_source{ParamSource::Kind::NewDriver, 0};
  double fd_window = 60.0;
  std::size_t fd_segments = 8;
  double late_window = 1000.0;
};

struct EvaluateCommand {
  std::filesystem::path sim_dir;
  std::filesystem::path episode;
  std::optional<std::vector<double>> probe_times;
  std::optional<double> resample_dt;
};

struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::filesystem::path base_dir = ".";
  std::optional<SynthCommand> synth;
  std::optional<ExtractCommand> extract;
  std::optional<CalibrateCommand> calibrate;
  std::optional<SimulateCommand> simulate;
  std::optional<RingCommand> ring;
  std::optional<EvaluateCommand> evaluate;
  // Raw per-driver overrides kept for re-expansion after a seed override.
  std::vector<std::optional<SynthSpec>> synth_overrides;

  /// Re-derives every seed-dependent field from `seed`.
  void apply_seed(std::uint64_t s) {
    seed = s;
    if (synth) synth->expand(seed, synth_overrides);
    if (calibrate) calibrate->sampler.seed = seed;
    if (simulate) simulate->sim.seed = seed;
  }
  void apply_threads(std::size_t t) {
    threads = t;
    if (calibrate) calibrate->sampler.threads = t;
    if (simulate) simulate->sim.threads = t;
  }
};

inline RunConfig parse_config(const json& root, const std::filesystem::path& base_dir) {
  using config_detail::Reader;
  using config_detail::resolve;
  RunConfig cfg;
  cfg.base_dir = base_dir;
  Reader r(root, "");
  cfg.schema_version = r.get("schema_version", kConfigSchemaVersion);
  if (cfg.schema_version != kConfigSchemaVersion)
    throw InvalidArgument("config: schema_version " + std::to_string(cfg.schema_version) + " is not supported (expected " +
                          std::to_string(kConfigSchemaVersion) + ")");
  cfg.seed = r.get<std::uint64_t>("seed", 0);
  cfg.threads = r.get<std::size_t>("threads", 1);

  if (r.has("synth")) {
    Reader s = r.child("synth");
    SynthCommand sc;
    if (s.has("template")) sc.base = config_detail::read_synth_spec(s.child("template"), sc.base);
    sc.num_drivers = s.get<std::size_t>("num_drivers", 1);
    sc.theta_jitter = s.get("theta_jitter", 0.0);
    sc.leader_offset_step = s.get("leader_offset_step", 0.0);
    if (s.has("drivers")) {
      const json& arr = s.raw("drivers");
      if (!arr.is_array()) throw InvalidArgument("config: 'synth.drivers' must be an array");
      for (std::size_t i = 0; i < arr.size(); ++i)
        cfg.synth_overrides.push_back(
            config_detail::read_synth_spec(Reader(arr[i], "synth.drivers[" + std::to_string(i) + "]"), sc.base));
      if (!s.has("num_drivers")) sc.num_drivers = arr.size();
      if (sc.num_drivers < arr.size()) throw InvalidArgument("config: synth.num_drivers is smaller than synth.drivers");
    }
    s.finish();
    cfg.synth = sc;
  }

  if (r.has("extract")) {
    Reader s = r.child("extract");
    ExtractCommand ec;
    if (!s.has("tracks")) throw InvalidArgument("config: 'extract.tracks' is required");
    ec.tracks = resolve(base_dir, s.as<std::string>("tracks"));
    ec.frame_rate = s.get("frame_rate", ec.frame_rate);
    ec.min_duration = s.get("min_duration", ec.min_duration);
    if (s.has("resample_dt")) ec.resample_dt = s.as<double>("resample_dt");
    s.finish();
    cfg.extract = ec;
  }

  if (r.has("calibrate")) {
    Reader s = r.child("calibrate");
    CalibrateCommand cc;
    if (!s.has("episodes")) throw InvalidArgument("config: 'calibrate.episodes' is required");
    for (const auto& p : s.as<std::vector<std::string>>("episodes")) cc.episodes.push_back(resolve(base_dir, p));
    if (cc.episodes.empty()) throw InvalidArgument("config: 'calibrate.episodes' is empty");
    cc.resample_dt = s.opt<double>("resample_dt");
    cc.max_duration = s.opt<double>("max_duration");
    cc.rhat_threshold = s.get("rhat_threshold", cc.rhat_threshold);
    if (s.has("model")) {
      Reader m = s.child("model");
      if (m.has("noise")) cc.model.noise = noise_model_from_string(m.as<std::string>("noise"));
      if (m.has("pooling")) cc.model.pooling = pooling_from_string(m.as<std::string>("pooling"));
      if (m.has("priors")) cc.model.priors = config_detail::read_priors(m.child("priors"));
      if (m.has("fixed_sigma0")) {
        const auto v = m.as<std::vector<double>>("fixed_sigma0");
        if (v.size() != 5) throw InvalidArgument("config: 'calibrate.model.fixed_sigma0' must have 5 entries");
        std::array<double, 5> a{};
        std::copy(v.begin(), v.end(), a.begin());
        cc.model.fixed_sigma0 = a;
      }
      m.finish();
    }
    cc.model.num_drivers = cc.episodes.size();
    if (s.has("sampler")) {
      Reader m = s.child("sampler");
      auto& sp = cc.sampler;
      if (m.has("kind")) sp.kind = sampler_kind_from_string(m.as<std::string>("kind"));
      sp.num_chains = m.get("num_chains", sp.num_chains);
      sp.warmup_steps = m.get("warmup_steps", sp.warmup_steps);
      sp.draw_steps = m.get("draw_steps", sp.draw_steps);
      sp.thin = m.get("thin", sp.thin);
      if (m.has("target_accept")) sp.target_accept = m.as<double>("target_accept");
      sp.adapt_window = m.get("adapt_window", sp.adapt_window);
      sp.cov_adapt_fraction = m.get("cov_adapt_fraction", sp.cov_adapt_fraction);
      sp.shrinkage = m.get("shrinkage", sp.shrinkage);
      sp.initial_scale = m.get("initial_scale", sp.initial_scale);
      sp.min_accept = m.get("min_accept", sp.min_accept);
      sp.fd_rel_step = m.get("fd_rel_step", sp.fd_rel_step);
      sp.hmc_max_leapfrog = m.get("hmc_max_leapfrog", sp.hmc_max_leapfrog);
      sp.hmc_path_length = m.get("hmc_path_length", sp.hmc_path_length);
      m.finish();
    }
    if (cc.sampler.num_chains < 2) throw InvalidArgument("config: calibrate.sampler.num_chains must be >= 2");
    if (cc.sampler.draw_steps / cc.sampler.thin < kMinDiagnosticDraws)
      throw InvalidArgument("config: calibrate.sampler needs at least " + std::to_string(kMinDiagnosticDraws) +
                            " stored draws per chain");
    s.finish();
    cc.model.validate();
    cfg.calibrate = cc;
  }

  if (r.has("simulate")) {
    Reader s = r.child("simulate");
    SimulateCommand sc;
    if (!s.has("episode")) throw InvalidArgument("config: 'simulate.episode' is required");
    sc.episode = resolve(base_dir, s.as<std::string>("episode"));
    if (s.has("mode")) sc.sim.mode = sim_mode_from_string(s.as<std::string>("mode"));
    if (!s.has("draws")) throw InvalidArgument("config: 'simulate.draws' is required");
    sc.draws = resolve(base_dir, s.as<std::string>("draws"));
    sc.sim.dt = s.opt<double>("dt");
    sc.sim.horizon = s.opt<double>("horizon");
    sc.sim.replicates = s.get("replicates", sc.sim.replicates);
    sc.sim.sigma_eps = s.opt<double>("sigma_eps");
    sc.sim.sigma_k = s.opt<double>("sigma_k");
    sc.sim.ell = s.opt<double>("ell");
    if (s.has("gp_sampler")) sc.sim.gp_sampler = config_detail::gp_sampler_from_string(s.as<std::string>("gp_sampler"));
    if (s.has("source")) sc.source = param_source_from_string(s.as<std::string>("source"));
    sc.output = s.get("output", sc.output);
    if (sc.output != "trajectories" && sc.output != "envelope" && sc.output != "both")
      throw InvalidArgument("config: 'simulate.output' must be trajectories|envelope|both");
    sc.probe_times = s.opt<std::vector<double>>("probe_times");
    s.finish();
    sc.sim.validate();
    cfg.simulate = sc;
  }

  if (r.has("ring")) {
    Reader s = r.child("ring");
    RingCommand rc;
    auto& g = rc.ring;
    g.radius = s.get("radius", g.radius);
    g.num_vehicles = s.get("num_vehicles", g.num_vehicles);
    g.initial_speed = s.get("initial_speed", g.initial_speed);
    g.duration = s.get("duration", g.duration);
    g.dt = s.get("dt", g.dt);
    g.vehicle_length = s.get("vehicle_length", g.vehicle_length);
    if (s.has("mode")) g.mode = sim_mode_from_string(s.as<std::string>("mode"));
    g.sigma_eps = s.opt<double>("sigma_eps");
    g.sigma_k = s.opt<double>("sigma_k");
    g.ell = s.opt<double>("ell");
    if (s.has("gp_sampler")) g.gp_sampler = config_detail::gp_sampler_from_string(s.as<std::string>("gp_sampler"));
    rc.source = s.get("source", rc.source);
    if (rc.source != "fixed" && rc.source != "posterior")
      throw InvalidArgument("config: 'ring.source' must be fixed|posterior");
    if (s.has("theta")) rc.theta = config_detail::read_theta(s.child("theta"), rc.theta);
    if (s.has("draws")) rc.draws = resolve(base_dir, s.as<std::string>("draws"));
    if (s.has("param_source")) rc.param_source = param_source_from_string(s.as<std::string>("param_source"));
    rc.fd_window = s.get("fd_window", rc.fd_window);
    rc.fd_segments = s.get("fd_segments", rc.fd_segments);
    rc.late_window = s.get("late_window", rc.late_window);
    s.finish();
    if (rc.source == "posterior" && rc.draws.empty())
      throw InvalidArgument("config: ring.source = posterior requires 'ring.draws'");
    if (rc.source == "fixed") rc.sigma_eps = g.sigma_eps.value_or(0.0);
    g.validate();
    cfg.ring = rc;
  }

  if (r.has("evaluate")) {
    Reader s = r.child("evaluate");
    EvaluateCommand ec;
    if (!s.has("sim_dir")) throw InvalidArgument("config: 'evaluate.sim_dir' is required");
    if (!s.has("episode")) throw InvalidArgument("config: 'evaluate.episode' is required");
    ec.sim_dir = resolve(base_dir, s.as<std::string>("sim_dir"));
    ec.episode = resolve(base_dir, s.as<std::string>("episode"));
    ec.probe_times = s.opt<std::vector<double>>("probe_times");
    ec.resample_dt = s.opt<double>("resample_dt");
    s.finish();
    cfg.evaluate = ec;
  }
  r.finish();
  cfg.apply_seed(cfg.seed);
  cfg.apply_threads(cfg.threads);
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json root;
  try {
    root = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw InvalidArgument("config '" + path.string() + "': " + e.what());
  }
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  return parse_config(root, base);
}

/// Fully resolved settings of one command, defaults included.
inline json resolved_json(const RunConfig& cfg, const std::string& command) {
  using namespace config_detail;
  json j;
  j["schema_version"] = cfg.schema_version;
  j["command"] = command;
  j["seed"] = cfg.seed;
  if (command == "synth" && cfg.synth) {
    json drivers = json::array();
    for (const auto& d : cfg.synth->drivers) drivers.push_back(synth_spec_json(d));
    j["synth"] = {{"num_drivers", cfg.synth->num_drivers},
                  {"theta_jitter", cfg.synth->theta_jitter},
                  {"leader_offset_step", cfg.synth->leader_offset_step},
                  {"drivers", drivers}};
  } else if (command == "extract" && cfg.extract) {
    j["extract"] = {{"tracks", cfg.extract->tracks.string()},
                    {"frame_rate", cfg.extract->frame_rate},
                    {"min_duration", cfg.extract->min_duration},
                    {"resample_dt", opt_json(cfg.extract->resample_dt)}};
  } else if (command == "calibrate" && cfg.calibrate) {
    const auto& c = *cfg.calibrate;
    json eps = json::array();
    for (const auto& p : c.episodes) eps.push_back(p.string());
    const auto& sp = c.sampler;
    j["calibrate"] = {
        {"episodes", eps},
        {"resample_dt", opt_json(c.resample_dt)},
        {"max_duration", opt_json(c.max_duration)},
        {"rhat_threshold", c.rhat_threshold},
        {"model",
         {{"noise", to_string(c.model.noise)},
          {"pooling", to_string(c.model.pooling)},
          {"num_drivers", c.model.num_drivers},
          {"priors", priors_json(c.model.priors)},
          {"fixed_sigma0", c.model.fixed_sigma0 ? json(*c.model.fixed_sigma0) : json(nullptr)}}},
        {"sampler",
         {{"kind", to_string(sp.kind)},
          {"num_chains", sp.num_chains},
          {"warmup_steps", sp.warmup_steps},
          {"draw_steps", sp.draw_steps},
          {"thin", sp.thin},
          {"target_accept", sp.target()},
          {"adapt_window", sp.adapt_window},
          {"cov_adapt_fraction", sp.cov_adapt_fraction},
          {"shrinkage", sp.shrinkage},
          {"initial_scale", sp.initial_scale},
          {"min_accept", sp.min_accept},
          {"fd_rel_step", sp.fd_rel_step},
          {"hmc_max_leapfrog", sp.hmc_max_leapfrog},
          {"hmc_path_length", sp.hmc_path_length},
          {"seed", sp.seed}}}};
  } else if (command == "simulate" && cfg.simulate) {
    const auto& s = *cfg.simulate;
    j["simulate"] = {{"draws", s.draws.string()},
                     {"episode", s.episode.string()},
                     {"mode", to_string(s.sim.mode)},
                     {"dt", opt_json(s.sim.dt)},
                     {"horizon", opt_json(s.sim.horizon)},
                     {"replicates", s.sim.replicates},
                     {"sigma_eps", opt_json(s.sim.sigma_eps)},
                     {"sigma_k", opt_json(s.sim.sigma_k)},
                     {"ell", opt_json(s.sim.ell)},
                     {"gp_sampler", sampler_string(s.sim.gp_sampler)},
                     {"source", param_source_string(s.source)},
                     {"output", s.output},
                     {"probe_times", s.probe_times ? json(*s.probe_times) : json(nullptr)}};
  } else if (command == "ring" && cfg.ring) {
    const auto& r = *cfg.ring;
    j["ring"] = {{"radius", r.ring.radius},
                 {"num_vehicles", r.ring.num_vehicles},
                 {"initial_speed", r.ring.initial_speed},
                 {"duration", r.ring.duration},
                 {"dt", r.ring.dt},
                 {"vehicle_length", r.ring.vehicle_length},
                 {"circumference", r.ring.circumference()},
                 {"mode", to_string(r.ring.mode)},
                 {"sigma_eps", opt_json(r.ring.sigma_eps)},
                 {"sigma_k", opt_json(r.ring.sigma_k)},
                 {"ell", opt_json(r.ring.ell)},
                 {"gp_sampler", sampler_string(r.ring.gp_sampler)},
                 {"source", r.source},
                 {"theta", theta_json(r.theta)},
                 {"draws", r.draws.string()},
                 {"param_source", param_source_string(r.param_source)},
                 {"fd_window", r.fd_window},
                 {"fd_segments", r.fd_segments},
                 {"late_window", r.late_window}};
  } else if (command == "evaluate" && cfg.evaluate) {
    const auto& e = *cfg.evaluate;
    j["evaluate"] = {{"sim_dir", e.sim_dir.string()},
                     {"episode", e.episode.string()},
                     {"probe_times", e.probe_times ? json(*e.probe_times) : json(nullptr)},
                     {"resample_dt", opt_json(e.resample_dt)}};
  }
  return j;
}

}  // namespace maidm
