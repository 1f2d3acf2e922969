#pragma once

// Single-lane ring road. Vehicle i follows vehicle (i + 1) mod N; all vehicles
// update simultaneously from the previous state. Gaps are carried as state
// and advanced by displacement differences, so identical vehicles with equal
// gaps keep exactly equal gaps.

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "maidm/error.hpp"
#include "maidm/idm.hpp"
#include "maidm/rng.hpp"
#include "maidm/simulate.hpp"

namespace maidm {

struct RingConfig {
  double radius = 128.0;
  std::size_t num_vehicles = 37;
  double initial_speed = 11.6;
  double duration = 3000.0;
  double dt = 0.5;
  double vehicle_length = 5.0;
  SimMode mode = SimMode::Deterministic;
  std::optional<double> sigma_eps;  ///< overrides per-vehicle values
  std::optional<double> sigma_k;
  std::optional<double> ell;
  GpSampler gp_sampler = GpSampler::Auto;

  double circumference() const { return 2.0 * std::numbers::pi * radius; }
  std::size_t num_steps() const { return static_cast<std::size_t>(std::llround(duration / dt)) + 1; }

  void validate() const {
    if (!(radius > 0.0)) throw InvalidArgument("RingConfig: radius must be > 0");
    if (num_vehicles < 1) throw InvalidArgument("RingConfig: need at least one vehicle");
    if (!(dt > 0.0) || !(duration > 0.0)) throw InvalidArgument("RingConfig: dt and duration must be > 0");
    if (!(initial_speed >= 0.0)) throw InvalidArgument("RingConfig: initial_speed must be >= 0");
    if (!(vehicle_length >= 0.0)) throw InvalidArgument("RingConfig: vehicle_length must be >= 0");
    if (!(static_cast<double>(num_vehicles) * vehicle_length < circumference()))
      throw InvalidArgument("RingConfig: " + std::to_string(num_vehicles) + " vehicles of length " +
                            csv::fmt(vehicle_length) + " m overfill a ring of " + csv::fmt(circumference()) + " m");
    if (sigma_eps && !(*sigma_eps >= 0.0)) throw InvalidArgument("RingConfig: sigma_eps must be >= 0");
    if (sigma_k && !(*sigma_k >= 0.0)) throw InvalidArgument("RingConfig: sigma_k must be >= 0");
    if (ell && !(*ell > 0.0)) throw InvalidArgument("RingConfig: ell must be > 0");
  }
};

struct RingOutput {
  double dt = 0.0;
  double circumference = 0.0;
  double vehicle_length = 0.0;
  std::size_t num_vehicles = 0;
  std::size_t num_steps = 0;  ///< states recorded (truncated on collision)
  std::vector<double> x;      ///< unwrapped front-bumper position, [step][vehicle]
  std::vector<double> v;
  std::vector<double> s;  ///< gap to the vehicle ahead
  bool collided = false;
  std::size_t collision_step = 0;
  std::vector<std::size_t> collision_followers;  ///< follower i of each colliding pair (i, i+1 mod N)

  double at_x(std::size_t k, std::size_t i) const { return x[k * num_vehicles + i]; }
  double at_v(std::size_t k, std::size_t i) const { return v[k * num_vehicles + i]; }
  double at_s(std::size_t k, std::size_t i) const { return s[k * num_vehicles + i]; }
  double time(std::size_t k) const { return static_cast<double>(k) * dt; }

  /// Cross-vehicle speed variance (population form) at step k.
  double speed_variance(std::size_t k) const {
    double m = 0.0;
    for (std::size_t i = 0; i < num_vehicles; ++i) m += at_v(k, i);
    m /= static_cast<double>(num_vehicles);
    double var = 0.0;
    for (std::size_t i = 0; i < num_vehicles; ++i) var += (at_v(k, i) - m) * (at_v(k, i) - m);
    return var / static_cast<double>(num_vehicles);
  }

  /// Mean of speed_variance over states with t >= t_from.
  double mean_speed_variance_from(double t_from) const {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < num_steps; ++k)
      if (time(k) >= t_from - 1e-9) {
        acc += speed_variance(k);
        ++n;
      }
    if (n == 0) throw InvalidArgument("mean_speed_variance_from: no states after t = " + csv::fmt(t_from));
    return acc / static_cast<double>(n);
  }
};

/// Vehicles start equally spaced at cfg.initial_speed. `params` holds one set
/// per vehicle, or a single set shared by all. Vehicle i draws its noise from
/// make_rng(seed, i).
inline RingOutput ring_simulate(const RingConfig& cfg, const std::vector<ParameterSet>& params, std::uint64_t seed) {
  cfg.validate();
  const std::size_t n = cfg.num_vehicles;
  if (params.size() != 1 && params.size() != n)
    throw InvalidArgument("ring_simulate: need 1 or " + std::to_string(n) + " parameter sets, got " +
                          std::to_string(params.size()));
  auto param = [&](std::size_t i) -> const ParameterSet& { return params.size() == 1 ? params[0] : params[i]; };
  for (std::size_t i = 0; i < (params.size() == 1 ? 1 : n); ++i) param(i).theta.validate();

  const std::size_t steps = cfg.num_steps();
  const double c = cfg.circumference();
  const double spacing = c / static_cast<double>(n);
  const double gap0 = spacing - cfg.vehicle_length;

  // Per-vehicle additive forcing over the whole run.
  std::vector<std::vector<double>> forcing(n);
  if (cfg.mode != SimMode::Deterministic) {
    const bool gp = cfg.mode == SimMode::StochMAIDM;
    for (std::size_t i = 0; i < n; ++i) {
      const ParameterSet& p = param(i);
      if (gp && !p.has_gp && !(cfg.sigma_k && cfg.ell))
        throw InvalidArgument("ring stoch_maidm needs sigma_k and ell (none in the parameter sets, no override)");
      Rng rng = make_rng(seed, i);
      forcing[i] = detail::replicate_forcing(steps, cfg.dt, cfg.sigma_eps.value_or(p.sigma_eps),
                                             cfg.sigma_k.value_or(p.sigma_k), cfg.ell.value_or(p.ell), gp,
                                             cfg.gp_sampler, rng);
    }
  }

  RingOutput out;
  out.dt = cfg.dt;
  out.circumference = c;
  out.vehicle_length = cfg.vehicle_length;
  out.num_vehicles = n;
  out.x.reserve(steps * n);
  out.v.reserve(steps * n);
  out.s.reserve(steps * n);

  std::vector<double> x(n), v(n, cfg.initial_speed), s(n, gap0), disp(n), v_next(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<double>(i) * spacing;

  for (std::size_t k = 0; k < steps; ++k) {
    out.x.insert(out.x.end(), x.begin(), x.end());
    out.v.insert(out.v.end(), v.begin(), v.end());
    out.s.insert(out.s.end(), s.begin(), s.end());
    out.num_steps = k + 1;
    if (k + 1 == steps) break;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t lead = (i + 1) % n;
      double a = detail::accel_unchecked(s[i], v[i], v[i] - v[lead], param(i).theta);
      if (!forcing[i].empty()) a += forcing[i][k];
      const KinematicState nx = step({x[i], v[i]}, a, cfg.dt);
      v_next[i] = nx.v;
      disp[i] = nx.x - x[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t lead = (i + 1) % n;
      s[i] = n == 1 ? s[i] : s[i] + disp[lead] - disp[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += disp[i];
      v[i] = v_next[i];
      if (!(s[i] > 0.0)) out.collision_followers.push_back(i);
    }
    if (!out.collision_followers.empty()) {
      out.collided = true;
      out.collision_step = k + 1;
      break;
    }
  }
  return out;
}

inline RingOutput ring_simulate(const RingConfig& cfg, const IdmParams& theta, std::uint64_t seed,
                                double sigma_eps = 0.0) {
  ParameterSet p;
  p.theta = theta;
  p.sigma_eps = sigma_eps;
  return ring_simulate(cfg, std::vector<ParameterSet>{p}, seed);
}

// ---------------------------------------------------------------------------
// Fundamental diagram (Edie's generalized definitions)

struct FdPoint {
  double density = 0.0;  ///< veh/km
  double flow = 0.0;     ///< veh/h
  double speed = 0.0;    ///< m/s
  std::size_t window = 0;
  std::size_t segment = 0;
};

/// Aggregates the ring run over cells of (circumference / segments) x window.
/// Each step is treated as a straight space-time line and clipped exactly to
/// the cells. Only complete windows are used; cells with no presence are
/// skipped. density = TT / A, flow = TD / A, speed = TD / TT, with A the cell area.
inline std::vector<FdPoint> fundamental_diagram(const RingOutput& out, double window, std::size_t segments = 8) {
  if (!(window > 0.0)) throw InvalidArgument("fundamental_diagram: window must be > 0");
  if (segments < 1) throw InvalidArgument("fundamental_diagram: segments must be >= 1");
  if (out.num_steps < 2) throw InvalidArgument("fundamental_diagram: need at least two recorded states");
  const double span = out.time(out.num_steps - 1);
  const auto windows = static_cast<std::size_t>(std::floor(span / window + 1e-9));
  if (windows == 0) throw InvalidArgument("fundamental_diagram: run shorter than one window");
  const double seg_len = out.circumference / static_cast<double>(segments);
  std::vector<double> tt(windows * segments, 0.0), td(windows * segments, 0.0);

  // Distributes one straight piece inside a single window across segments.
  auto add_piece = [&](std::size_t w, double x0, double x1, double dtime) {
    if (dtime <= 0.0) return;
    const double dist = x1 - x0;
    if (dist <= 0.0) {
      const double xm = std::fmod(x0, out.circumference);
      auto j = static_cast<std::size_t>(std::floor((xm < 0 ? xm + out.circumference : xm) / seg_len));
      j = std::min(j, segments - 1);
      tt[w * segments + j] += dtime;
      return;
    }
    double a = x0;
    while (a < x1) {
      double edge = (std::floor(a / seg_len) + 1.0) * seg_len;
      if (edge <= a) edge += seg_len;  // a sits on a boundary after rounding
      const double b = std::min(x1, edge);
      const double xm = std::fmod(0.5 * (a + b), out.circumference);
      auto j = static_cast<std::size_t>(std::floor((xm < 0 ? xm + out.circumference : xm) / seg_len));
      j = std::min(j, segments - 1);
      tt[w * segments + j] += dtime * (b - a) / dist;
      td[w * segments + j] += b - a;
      if (b <= a) break;
      a = b;
    }
  };

  for (std::size_t i = 0; i < out.num_vehicles; ++i) {
    for (std::size_t k = 0; k + 1 < out.num_steps; ++k) {
      double t0 = out.time(k);
      const double t1 = out.time(k + 1);
      const double xa = out.at_x(k, i), xb = out.at_x(k + 1, i);
      auto xpos = [&](double t) { return xa + (xb - xa) * (t - out.time(k)) / (t1 - out.time(k)); };
      while (t0 < t1) {
        const auto w = static_cast<std::size_t>(std::floor(t0 / window + 1e-12));
        if (w >= windows) break;
        const double tend = std::min(t1, static_cast<double>(w + 1) * window);
        add_piece(w, xpos(t0), xpos(tend), tend - t0);
        t0 = tend;
      }
    }
  }

  const double area = seg_len * window;
  std::vector<FdPoint> pts;
  for (std::size_t w = 0; w < windows; ++w)
    for (std::size_t j = 0; j < segments; ++j) {
      const double t_tot = tt[w * segments + j], d_tot = td[w * segments + j];
      if (!(t_tot > 0.0)) continue;
      FdPoint p;
      p.window = w;
      p.segment = j;
      p.speed = d_tot / t_tot;
      p.density = t_tot / area * 1000.0;
      p.flow = p.density * p.speed * 3.6;
      pts.push_back(p);
    }
  return pts;
}

inline void write_ring_csv(const RingOutput& out, const std::filesystem::path& path) {
  auto f = csv::open_out(path);
  f << "t,vehicle,x,v\n";
  for (std::size_t k = 0; k < out.num_steps; ++k)
    for (std::size_t i = 0; i < out.num_vehicles; ++i) {
      double xw = std::fmod(out.at_x(k, i), out.circumference);
      if (xw < 0.0) xw += out.circumference;
      f << csv::fmt(out.time(k)) << ',' << i << ',' << csv::fmt(xw) << ',' << csv::fmt(out.at_v(k, i)) << '\n';
    }
  csv::finish(f, path);
}

inline void write_fd_csv(const std::vector<FdPoint>& pts, const std::filesystem::path& path) {
  auto f = csv::open_out(path);
  f << "density,flow,speed\n";
  for (const auto& p : pts) f << csv::fmt(p.density) << ',' << csv::fmt(p.flow) << ',' << csv::fmt(p.speed) << '\n';
  csv::finish(f, path);
}

}  // namespace maidm
