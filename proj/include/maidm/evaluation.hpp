#pragma once

// Scores of simulated ensembles against an observed episode: RMSE across
// replicates, empirical CRPS, and residual autocorrelation.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "maidm/csv.hpp"
#include "maidm/episode.hpp"
#include "maidm/error.hpp"
#include "maidm/simulate.hpp"

namespace maidm {

/// Observed channel aligned with simulated states: a is the forward
/// difference (v[k+1] - v[k]) / dt and has one fewer valid sample.
inline std::vector<double> truth_channel(const Episode& ep, Channel c) {
  switch (c) {
    case Channel::A: {
      auto a = ep.accel();
      a.pop_back();
      return a;
    }
    case Channel::V: return ep.v();
    case Channel::S: return ep.s();
    case Channel::X: return ep.x();
  }
  throw InvalidArgument("bad channel");
}

namespace detail {
inline void check_grid(const SimOutput& sim, const Episode& truth) {
  if (std::abs(sim.dt - truth.dt()) > 1e-9 * std::max(1.0, truth.dt()))
    throw InvalidArgument("evaluation: simulation dt " + csv::fmt(sim.dt) + " differs from truth dt " +
                          csv::fmt(truth.dt()));
  if (sim.replicates.empty()) throw InvalidArgument("evaluation: no replicates");
  for (const auto& r : sim.replicates)
    if (r.traj.size() > truth.size())
      throw InvalidArgument("evaluation: simulated horizon exceeds the truth record");
}
}  // namespace detail

struct RmseResult {
  double mean = 0.0;
  double sd = 0.0;  ///< sample sd across replicates (0 for one replicate)
  std::vector<double> per_replicate;
};

/// Per replicate: sqrt(mean_k (sim_k - truth_k)^2) over the steps that
/// replicate reached; then mean and sd over replicates.
inline RmseResult rmse_ensemble(const SimOutput& sim, const Episode& truth, Channel c) {
  detail::check_grid(sim, truth);
  const auto y = truth_channel(truth, c);
  RmseResult out;
  for (const auto& r : sim.replicates) {
    const auto& x = channel_of(r.traj, c);
    const std::size_t n = std::min(x.size(), y.size());
    if (n == 0) throw InvalidArgument("rmse_ensemble: empty replicate");
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += (x[k] - y[k]) * (x[k] - y[k]);
    out.per_replicate.push_back(std::sqrt(acc / static_cast<double>(n)));
  }
  const double m = static_cast<double>(out.per_replicate.size());
  out.mean = std::accumulate(out.per_replicate.begin(), out.per_replicate.end(), 0.0) / m;
  if (out.per_replicate.size() > 1) {
    double ss = 0.0;
    for (double v : out.per_replicate) ss += (v - out.mean) * (v - out.mean);
    out.sd = std::sqrt(ss / (m - 1.0));
  }
  return out;
}

/// CRPS of the empirical CDF of `ensemble` at y: the exact integral of
/// (F(x) - 1{x >= y})^2 over x, from the sorted values.
inline double crps_empirical(std::vector<double> ensemble, double y) {
  if (ensemble.empty()) throw InvalidArgument("crps_empirical: empty ensemble");
  std::sort(ensemble.begin(), ensemble.end());
  const auto n = static_cast<double>(ensemble.size());
  // Integrate piecewise over the breakpoints {x_i} U {y}.
  std::vector<double> pts = ensemble;
  pts.push_back(y);
  std::sort(pts.begin(), pts.end());
  double total = 0.0;
  std::size_t below = 0;  // count of x_i <= left end of the current interval
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    const double lo = pts[k], hi = pts[k + 1];
    if (hi <= lo) continue;
    while (below < ensemble.size() && ensemble[below] <= lo) ++below;
    const double f = static_cast<double>(below) / n;
    const double h = lo >= y ? 1.0 : 0.0;
    total += (f - h) * (f - h) * (hi - lo);
  }
  return total;
}

/// Energy form with the plug-in (1/N^2) pair term: E|X - y| - E|X - X'| / 2.
inline double crps_energy(std::vector<double> ensemble, double y) {
  if (ensemble.empty()) throw InvalidArgument("crps_energy: empty ensemble");
  std::sort(ensemble.begin(), ensemble.end());
  const auto n = static_cast<double>(ensemble.size());
  double abs_dev = 0.0;
  for (double x : ensemble) abs_dev += std::abs(x - y);
  // sum_{i,j} |x_i - x_j| = 2 sum_i (2i - n + 1) x_(i) for sorted values (0-based i).
  double pair = 0.0;
  for (std::size_t i = 0; i < ensemble.size(); ++i) pair += (2.0 * static_cast<double>(i) - n + 1.0) * ensemble[i];
  pair *= 2.0;
  return abs_dev / n - pair / (2.0 * n * n);
}

struct CrpsSeries {
  double mean = 0.0;           ///< arithmetic mean over times
  std::vector<double> series;  ///< CRPS at every scored time index
  std::vector<double> probes;  ///< CRPS at each probe time
};

/// CRPS at each time from the replicates that reached it; the time average
/// covers every index where truth and at least one replicate exist.
inline CrpsSeries crps_series(const SimOutput& sim, const Episode& truth, Channel c,
                              const std::vector<double>& probe_times = {}) {
  detail::check_grid(sim, truth);
  const auto y = truth_channel(truth, c);
  std::size_t horizon = 0;
  for (const auto& r : sim.replicates) horizon = std::max(horizon, r.traj.size());
  horizon = std::min(horizon, y.size());
  CrpsSeries out;
  std::vector<double> ens;
  for (std::size_t k = 0; k < horizon; ++k) {
    ens.clear();
    for (const auto& r : sim.replicates)
      if (k < r.traj.size()) ens.push_back(channel_of(r.traj, c)[k]);
    out.series.push_back(crps_empirical(ens, y[k]));
  }
  if (out.series.empty()) throw InvalidArgument("crps_series: nothing to score");
  out.mean = std::accumulate(out.series.begin(), out.series.end(), 0.0) / static_cast<double>(out.series.size());
  for (double t : probe_times) {
    const double kf = t / sim.dt;
    const auto k = static_cast<std::size_t>(std::llround(kf));
    if (t < 0.0 || std::abs(kf - static_cast<double>(k)) > 1e-6 || k >= out.series.size())
      throw InvalidArgument("crps_series: probe time " + csv::fmt(t) + " s is off the grid or outside the horizon");
    out.probes.push_back(out.series[k]);
  }
  return out;
}

/// Sample autocorrelation r_k = sum (x_t - m)(x_{t+k} - m) / sum (x_t - m)^2, k = 1..max_lag.
/// Throws on constant input (degenerate).
inline std::vector<double> residual_autocorr(const std::vector<double>& x, std::size_t max_lag) {
  if (x.size() <= max_lag + 10)
    throw InvalidArgument("residual_autocorr: series of length " + std::to_string(x.size()) + " too short for lag " +
                          std::to_string(max_lag));
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double c0 = 0.0;
  for (double v : x) c0 += (v - m) * (v - m);
  if (!(c0 > 0.0)) throw DomainError("residual_autocorr: constant series (degenerate)");
  std::vector<double> r(max_lag);
  for (std::size_t k = 1; k <= max_lag; ++k) {
    double ck = 0.0;
    for (std::size_t t = 0; t + k < x.size(); ++t) ck += (x[t] - m) * (x[t + k] - m);
    r[k - 1] = ck / c0;
  }
  return r;
}

struct ChannelScore {
  RmseResult rmse;
  CrpsSeries crps;
};

struct ScoreReport {
  std::string label;
  SimMode mode = SimMode::Deterministic;
  std::size_t replicates = 0;
  std::size_t collisions = 0;
  std::vector<double> probe_times;
  std::map<std::string, ChannelScore> channels;  ///< keyed by "a", "v", "s"
  std::vector<double> residual_acf;  ///< optional, lags 1..k

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["label"] = label;
    j["mode"] = to_string(mode);
    j["replicates"] = replicates;
    j["collisions"] = collisions;
    j["probe_times_s"] = probe_times;
    for (const auto& [name, sc] : channels) {
      nlohmann::json c;
      c["rmse_mean"] = sc.rmse.mean;
      c["rmse_sd"] = sc.rmse.sd;
      c["crps_mean"] = sc.crps.mean;
      c["crps_probes"] = sc.crps.probes;
      j["channels"][name] = c;
    }
    if (!residual_acf.empty()) j["residual_acf"] = residual_acf;
    return j;
  }
};

inline ScoreReport score_simulation(const SimOutput& sim, const Episode& truth, const std::vector<double>& probe_times,
                                    const std::string& label = "") {
  ScoreReport rep;
  rep.label = label;
  rep.mode = sim.mode;
  rep.replicates = sim.replicates.size();
  rep.collisions = sim.collisions();
  rep.probe_times = probe_times;
  for (Channel c : {Channel::A, Channel::V, Channel::S}) {
    ChannelScore sc;
    sc.rmse = rmse_ensemble(sim, truth, c);
    sc.crps = crps_series(sim, truth, c, probe_times);
    rep.channels[to_string(c)] = std::move(sc);
  }
  return rep;
}

/// Flat table with one row per report: RMSE mean/sd per channel, then the
/// time-averaged CRPS and probe CRPS per channel. Values are SI and unscaled.
inline std::string table_ii_csv(const std::vector<ScoreReport>& reports) {
  std::string out = "model,mode,replicates,collisions";
  for (const char* c : {"a", "v", "s"}) out += std::string(",rmse_") + c + "_mean,rmse_" + c + "_sd";
  std::size_t max_probes = 0;
  for (const auto& r : reports) max_probes = std::max(max_probes, r.probe_times.size());
  for (const char* c : {"a", "v", "s"}) {
    out += std::string(",crps_") + c + "_mean";
    for (std::size_t p = 0; p < max_probes; ++p) out += std::string(",crps_") + c + "_probe" + std::to_string(p);
  }
  out += '\n';
  for (const auto& r : reports) {
    out += r.label + "," + to_string(r.mode) + "," + std::to_string(r.replicates) + "," + std::to_string(r.collisions);
    for (const char* c : {"a", "v", "s"}) {
      const auto& sc = r.channels.at(c);
      out += "," + csv::fmt(sc.rmse.mean) + "," + csv::fmt(sc.rmse.sd);
    }
    for (const char* c : {"a", "v", "s"}) {
      const auto& sc = r.channels.at(c);
      out += "," + csv::fmt(sc.crps.mean);
      for (std::size_t p = 0; p < max_probes; ++p) out += "," + (p < sc.crps.probes.size() ? csv::fmt(sc.crps.probes[p]) : "");
    }
    out += '\n';
  }
  return out;
}

}  // namespace maidm
