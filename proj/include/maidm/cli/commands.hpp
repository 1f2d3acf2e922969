#pragma once

// Subcommand bodies shared by the maidm executable and the tests. Each one
// reads a RunConfig, writes its artifacts into `out`, and drops a
// resolved_config.json snapshot next to them.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "maidm/config.hpp"
#include "maidm/diagnostics.hpp"
#include "maidm/episode.hpp"
#include "maidm/evaluation.hpp"
#include "maidm/highd.hpp"
#include "maidm/io.hpp"
#include "maidm/mcmc.hpp"
#include "maidm/model.hpp"
#include "maidm/ring.hpp"
#include "maidm/simulate.hpp"
#include "maidm/synth.hpp"

namespace maidm::cli {

namespace fs = std::filesystem;

/// Posterior diagnostics are beyond the configured threshold.
class DiagnosticFailure : public NumericError {
 public:
  using NumericError::NumericError;
};

struct Options {
  fs::path out = "out";
  bool force = false;
};

namespace detail {

inline void write_json(const fs::path& path, const nlohmann::json& j) { csv::write_text(path, j.dump(2) + "\n"); }

inline void prepare_out(const fs::path& out) {
  fs::create_directories(out);
  if (!fs::is_directory(out)) throw IoError("output path '" + out.string() + "' is not a directory");
}

inline void snapshot(const RunConfig& cfg, const std::string& command, const fs::path& out) {
  write_json(out / "resolved_config.json", resolved_json(cfg, command));
}

inline std::string safe_name(const std::string& id) {
  std::string s = id.empty() ? "episode" : id;
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  return s;
}

/// Probe times scored when none are configured: 37 s for cars and 45 s for
/// trucks, dropped when the horizon is shorter.
inline std::vector<double> default_probes(const Episode& truth, std::size_t steps, double dt) {
  const double t = truth.vehicle_class() == VehicleClass::Car ? 37.0 : 45.0;
  const auto k = static_cast<std::size_t>(std::llround(t / dt));
  if (k + 1 < steps && std::abs(static_cast<double>(k) * dt - t) < 1e-6) return {t};
  return {};
}

inline Episode grid_episode(const Episode& ep, std::optional<double> dt) {
  if (!dt || std::abs(*dt - ep.dt()) < 1e-12) return ep;
  return ep.resample(*dt);
}

template <class T>
const T& need(const std::optional<T>& section, const char* name) {
  if (!section) throw InvalidArgument(std::string("config has no '") + name + "' section");
  return *section;
}

}  // namespace detail

inline void cmd_synth(const RunConfig& cfg, const Options& opt) {
  const auto& sc = detail::need(cfg.synth, "synth");
  detail::prepare_out(opt.out);
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& spec : sc.drivers) {
    const auto res = synth_generate(spec);
    const std::string base = detail::safe_name(spec.driver_id);
    save_episode_csv(res.episode, opt.out / (base + ".csv"));
    detail::write_json(opt.out / (base + ".truth.json"), truth_to_json(res.truth, spec.driver_id));
    manifest.push_back({{"driver_id", spec.driver_id}, {"episode", base + ".csv"}, {"truth", base + ".truth.json"}});
  }
  detail::write_json(opt.out / "manifest.json", manifest);
  detail::snapshot(cfg, "synth", opt.out);
}

inline void cmd_extract(const RunConfig& cfg, const Options& opt) {
  const auto& ec = detail::need(cfg.extract, "extract");
  detail::prepare_out(opt.out);
  const auto tracks = load_track_csv(ec.tracks, ec.frame_rate);
  const auto episodes = extract_episodes(tracks, ec.min_duration);
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& raw : episodes) {
    const Episode ep = detail::grid_episode(raw, ec.resample_dt);
    const std::string base = "episode_" + detail::safe_name(ep.driver_id());
    save_episode_csv(ep, opt.out / (base + ".csv"));
    manifest.push_back({{"driver_id", ep.driver_id()},
                        {"episode", base + ".csv"},
                        {"vehicle_class", to_string(ep.vehicle_class())},
                        {"duration_s", ep.duration()}});
  }
  detail::write_json(opt.out / "manifest.json", manifest);
  detail::snapshot(cfg, "extract", opt.out);
}

inline std::vector<Episode> load_calibration_episodes(const CalibrateCommand& cc) {
  std::vector<Episode> eps;
  for (const auto& p : cc.episodes) {
    Episode ep = detail::grid_episode(load_episode_csv(p), cc.resample_dt);
    if (cc.max_duration) {
      const auto n = static_cast<std::size_t>(std::llround(*cc.max_duration / ep.dt())) + 1;
      if (n < ep.size()) ep = ep.head(n);
    }
    eps.push_back(std::move(ep));
  }
  return eps;
}

/// Draws and diagnostics are always written; the summary tables only when
/// every R-hat is within the threshold (or `force`).
inline void cmd_calibrate(const RunConfig& cfg, const Options& opt) {
  const auto& cc = detail::need(cfg.calibrate, "calibrate");
  detail::prepare_out(opt.out);
  detail::snapshot(cfg, "calibrate", opt.out);
  auto episodes = load_calibration_episodes(cc);
  const double dt = episodes.front().dt();
  ModelSpec spec = cc.model;
  spec.num_drivers = episodes.size();
  Posterior post(spec, std::move(episodes));
  const auto samples = sample_posterior(post, cc.sampler);
  write_draws_csv(samples, opt.out / "draws.csv");
  const auto sum = summarize(samples);
  detail::write_json(opt.out / "diagnostics.json", diagnostics_json(samples, sum, cc.rhat_threshold));

  std::vector<std::string> bad;
  for (const auto& r : sum.rows)
    if (r.degenerate || !(r.rhat <= cc.rhat_threshold)) bad.push_back(r.name);
  if (!bad.empty() && !opt.force) {
    std::string names;
    for (std::size_t i = 0; i < bad.size() && i < 8; ++i) names += (i ? ", " : "") + bad[i];
    if (bad.size() > 8) names += ", ...";
    throw DiagnosticFailure("calibrate: R-hat above " + csv::fmt(cc.rhat_threshold) + " or degenerate chains for " +
                            names + "; summary not written (use --force to override)");
  }
  csv::write_text(opt.out / "summary.csv", summary_csv(sum));
  csv::write_text(opt.out / "table_i.csv", table_i_csv(sum, dt));
}

inline void cmd_simulate(const RunConfig& cfg, const Options& opt) {
  const auto& sc = detail::need(cfg.simulate, "simulate");
  detail::prepare_out(opt.out);
  detail::snapshot(cfg, "simulate", opt.out);
  const auto draws = read_draws_csv(sc.draws);
  const Episode raw = load_episode_csv(sc.episode);
  const Episode truth = detail::grid_episode(raw, sc.sim.dt);
  const LeaderTrack leader = prepare_leader(raw, sc.sim);
  const KinematicState init = truth.initial_state();

  std::vector<ParameterSet> sets;
  if (sc.sim.mode == SimMode::Deterministic)
    sets.push_back(posterior_mean_set(draws, sc.source));
  else
    sets = sample_parameter_sets(draws, sc.sim.replicates, sc.sim.seed, sc.source);
  write_parameter_sets_csv(sets, opt.out / "parameter_sets.csv");

  const SimOutput sim = simulate_ensemble(sets, leader, init, sc.sim);
  if (sc.output != "envelope") write_sim_replicates(sim, opt.out / "replicates");
  if (sc.output != "trajectories")
    for (Channel c : {Channel::A, Channel::V, Channel::S})
      write_envelope_csv(sim, c, opt.out / ("envelope_" + to_string(c) + ".csv"));

  const auto probes = sc.probe_times ? *sc.probe_times : detail::default_probes(truth, sim.steps, sim.dt);
  const auto rep = score_simulation(sim, truth, probes, to_string(sc.sim.mode));
  detail::write_json(opt.out / "score.json", rep.to_json());
  csv::write_text(opt.out / "table_ii.csv", table_ii_csv({rep}));
}

inline void cmd_evaluate(const RunConfig& cfg, const Options& opt) {
  const auto& ec = detail::need(cfg.evaluate, "evaluate");
  detail::prepare_out(opt.out);
  detail::snapshot(cfg, "evaluate", opt.out);
  const SimOutput sim = read_sim_replicates(ec.sim_dir);
  const Episode truth = detail::grid_episode(load_episode_csv(ec.episode), ec.resample_dt ? ec.resample_dt : sim.dt);
  const auto probes = ec.probe_times ? *ec.probe_times : detail::default_probes(truth, sim.steps, sim.dt);
  const auto rep = score_simulation(sim, truth, probes, to_string(sim.mode));
  detail::write_json(opt.out / "score.json", rep.to_json());
  csv::write_text(opt.out / "table_ii.csv", table_ii_csv({rep}));
}

inline void cmd_ring(const RunConfig& cfg, const Options& opt) {
  const auto& rc = detail::need(cfg.ring, "ring");
  detail::prepare_out(opt.out);
  detail::snapshot(cfg, "ring", opt.out);
  RingOutput out;
  if (rc.source == "fixed") {
    ParameterSet p;
    p.theta = rc.theta;
    p.sigma_eps = rc.sigma_eps;
    out = ring_simulate(rc.ring, std::vector<ParameterSet>{p}, cfg.seed);
  } else {
    const auto draws = read_draws_csv(rc.draws);
    const auto sets = sample_parameter_sets(draws, rc.ring.num_vehicles, cfg.seed, rc.param_source);
    write_parameter_sets_csv(sets, opt.out / "parameter_sets.csv");
    out = ring_simulate(rc.ring, sets, cfg.seed);
  }
  write_ring_csv(out, opt.out / "ring.csv");
  const auto fd = fundamental_diagram(out, rc.fd_window, rc.fd_segments);
  write_fd_csv(fd, opt.out / "fd.csv");

  nlohmann::json j;
  j["num_vehicles"] = out.num_vehicles;
  j["steps"] = out.num_steps;
  j["circumference_m"] = out.circumference;
  j["collided"] = out.collided;
  if (out.collided) j["collision_step"] = out.collision_step;
  const double t_end = static_cast<double>(out.num_steps - 1) * out.dt;
  const double from = std::max(0.0, t_end - rc.late_window);
  j["late_window_start_s"] = from;
  j["late_speed_variance"] = out.mean_speed_variance_from(from);
  j["fd_cells"] = fd.size();
  detail::write_json(opt.out / "ring_summary.json", j);
}

}  // namespace maidm::cli
