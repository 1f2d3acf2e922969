#pragma once

// Synthetic leader-follower episodes generated by IDM plus (i.i.d. | GP + i.i.d.)
// acceleration noise, with recorded ground truth.

#include <cmath>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "maidm/csv.hpp"
#include "maidm/episode.hpp"
#include "maidm/error.hpp"
#include "maidm/gp.hpp"
#include "maidm/idm.hpp"
#include "maidm/rng.hpp"

namespace maidm {

enum class NoiseModel { BIDM, MAIDM };

inline std::string to_string(NoiseModel m) { return m == NoiseModel::BIDM ? "bidm" : "maidm"; }

inline NoiseModel noise_model_from_string(const std::string& s) {
  if (s == "bidm" || s == "B-IDM") return NoiseModel::BIDM;
  if (s == "maidm" || s == "MA-IDM") return NoiseModel::MAIDM;
  throw InvalidArgument("unknown noise model '" + s + "' (expected bidm|maidm)");
}

/// Leader speed profile. Kinds:
///   constant    : speed = v_high
///   sinusoid    : v_mean + amplitude sin(2 pi t / period + phase)
///   stop_and_go : cruise v_high for hold_high, brake at `decel` to v_low,
///                 hold v_low for hold_low, accelerate at `accel` back; repeat
///   ramp_stop   : v_high decreasing linearly to 0 over ramp_time, then stopped
struct LeaderProfile {
  std::string kind = "stop_and_go";
  double v_high = 15.0;
  double v_low = 2.0;
  double v_mean = 10.0;
  double amplitude = 5.0;
  double period = 40.0;
  double phase = 0.0;
  double accel = 1.0;
  double decel = 1.5;
  double hold_high = 12.0;
  double hold_low = 6.0;
  double ramp_time = 10.0;
  double start_offset = 0.0;  ///< time shift applied to every profile [s]

  double speed(double t) const {
    t += start_offset;
    if (kind == "constant") return v_high;
    if (kind == "sinusoid") return std::max(0.0, v_mean + amplitude * std::sin(2.0 * std::numbers::pi * t / period + phase));
    if (kind == "ramp_stop") return t >= ramp_time ? 0.0 : v_high * (1.0 - t / ramp_time);
    if (kind == "stop_and_go") {
      const double t_dec = (v_high - v_low) / decel, t_acc = (v_high - v_low) / accel;
      const double cycle = hold_high + t_dec + hold_low + t_acc;
      double u = std::fmod(t, cycle);
      if (u < hold_high) return v_high;
      u -= hold_high;
      if (u < t_dec) return v_high - decel * u;
      u -= t_dec;
      if (u < hold_low) return v_low;
      u -= hold_low;
      return v_low + accel * u;
    }
    throw InvalidArgument("unknown leader profile kind '" + kind + "'");
  }

  void validate() const {
    (void)speed(0.0);
    if (kind == "stop_and_go" && !(v_high > v_low && v_low >= 0.0 && accel > 0.0 && decel > 0.0))
      throw InvalidArgument("stop_and_go profile needs v_high > v_low >= 0 and positive accel/decel");
    if (kind == "sinusoid" && !(period > 0.0)) throw InvalidArgument("sinusoid profile needs period > 0");
    if (kind == "ramp_stop" && !(ramp_time > 0.0)) throw InvalidArgument("ramp_stop profile needs ramp_time > 0");
  }
};

struct SynthSpec {
  std::string driver_id = "synth";
  VehicleClass vehicle_class = VehicleClass::Car;
  IdmParams theta;
  NoiseModel noise = NoiseModel::MAIDM;
  double sigma_eps = 0.1;
  double sigma_k = 0.2;
  double ell = 1.3;  ///< seconds
  LeaderProfile leader;
  double duration = 300.0;
  double dt = 0.2;
  double leader_length = 5.0;
  std::optional<double> initial_speed;  ///< follower; default leader speed at t=0
  std::optional<double> initial_gap;    ///< default: equilibrium gap at the initial speed
  std::uint64_t seed = 1;

  std::size_t num_samples() const { return static_cast<std::size_t>(std::llround(duration / dt)) + 1; }

  void validate() const {
    theta.validate();
    leader.validate();
    if (!(dt > 0.0) || !(duration > 0.0)) throw InvalidArgument("SynthSpec: dt and duration must be > 0");
    if (num_samples() < 100) throw InvalidArgument("SynthSpec: duration/dt must yield >= 100 samples");
    if (!(sigma_eps >= 0.0) || !(sigma_k >= 0.0) || !(ell > 0.0))
      throw InvalidArgument("SynthSpec: need sigma_eps >= 0, sigma_k >= 0, ell > 0");
    if (!(leader_length >= 0.0)) throw InvalidArgument("SynthSpec: leader_length must be >= 0");
  }
};

struct SynthTruth {
  IdmParams theta;
  NoiseModel noise = NoiseModel::MAIDM;
  double sigma_eps = 0.0;
  double sigma_k = 0.0;
  double ell = 0.0;
  std::uint64_t seed = 0;      ///< master seed of the spec
  unsigned attempts = 1;       ///< generation attempts used (collisions force regeneration)
  std::vector<double> forcing; ///< realized noise acceleration per step (GP + i.i.d.)
};

struct SynthResult {
  Episode episode;
  SynthTruth truth;
};

/// Leader channel integrated with the same ballistic rule as the follower.
inline LeaderTrack make_leader(const LeaderProfile& prof, std::size_t n, double dt, double x0, double length) {
  LeaderTrack lt;
  lt.dt = dt;
  lt.leader_length = length;
  lt.x.resize(n);
  lt.v.resize(n);
  lt.v[0] = prof.speed(0.0);
  lt.x[0] = x0;
  for (std::size_t k = 1; k < n; ++k) {
    lt.v[k] = prof.speed(static_cast<double>(k) * dt);
    lt.x[k] = lt.x[k - 1] + 0.5 * (lt.v[k] + lt.v[k - 1]) * dt;
  }
  return lt;
}

inline constexpr unsigned kSynthMaxAttempts = 10;

inline SynthResult synth_generate(const SynthSpec& spec) {
  spec.validate();
  const std::size_t n = spec.num_samples();
  const double v_init = spec.initial_speed.value_or(spec.leader.speed(0.0));
  const double gap0 = spec.initial_gap.value_or(equilibrium_gap(std::min(v_init, 0.999 * spec.theta.v0), spec.theta));
  const LeaderTrack leader = make_leader(spec.leader, n, spec.dt, gap0 + spec.leader_length, spec.leader_length);

  std::vector<double> times(n);
  for (std::size_t k = 0; k < n; ++k) times[k] = static_cast<double>(k) * spec.dt;

  const bool gp_on = spec.noise == NoiseModel::MAIDM && spec.sigma_k > 0.0;
  std::optional<CovMatrix> gram_factor;
  if (gp_on && n <= kExactSamplingMax) gram_factor = gram(times, {spec.sigma_k, spec.ell});

  for (unsigned attempt = 0; attempt < kSynthMaxAttempts; ++attempt) {
    Rng rng = make_rng(spec.seed, attempt);
    std::vector<double> forcing(n, 0.0);
    if (gp_on) {
      forcing = gram_factor ? sample_gp_path_exact(*gram_factor, rng)
                            : sample_gp_path(times, {spec.sigma_k, spec.ell}, rng);
    }
    if (spec.sigma_eps > 0.0) {
      std::normal_distribution<double> eps(0.0, spec.sigma_eps);
      for (auto& f : forcing) f += eps(rng);
    }
    const Trajectory tr = rollout_forced(leader, {0.0, v_init}, spec.theta, forcing);
    if (tr.collided) continue;
    Episode ep(spec.driver_id, times, tr.x, tr.v, leader.x, leader.v, spec.leader_length, spec.vehicle_class);
    SynthTruth truth{spec.theta, spec.noise, spec.sigma_eps, spec.noise == NoiseModel::MAIDM ? spec.sigma_k : 0.0,
                     spec.noise == NoiseModel::MAIDM ? spec.ell : 0.0, spec.seed, attempt + 1, std::move(forcing)};
    return {std::move(ep), std::move(truth)};
  }
  throw NumericError("synth_generate: follower collided in " + std::to_string(kSynthMaxAttempts) +
                     " attempts for driver '" + spec.driver_id + "'");
}

inline nlohmann::json truth_to_json(const SynthTruth& t, const std::string& driver_id) {
  nlohmann::json j;
  j["driver_id"] = driver_id;
  j["theta"] = {{"v0", t.theta.v0}, {"s0", t.theta.s0}, {"T", t.theta.T}, {"alpha", t.theta.alpha},
                {"beta", t.theta.beta}, {"delta", t.theta.delta}, {"s1", t.theta.s1}};
  j["noise"] = {{"model", to_string(t.noise)}, {"sigma_eps", t.sigma_eps}};
  if (t.noise == NoiseModel::MAIDM) {
    j["noise"]["sigma_k"] = t.sigma_k;
    j["noise"]["ell_s"] = t.ell;
  }
  j["seed"] = t.seed;
  j["attempts"] = t.attempts;
  return j;
}

}  // namespace maidm
