#pragma once

// Intelligent Driver Model: acceleration law, desired gap, ballistic update
// and leader-driven rollouts of a single follower.

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maidm/error.hpp"

namespace maidm {

/// Calibratable IDM parameters plus the fixed exponent and gap coefficient.
struct IdmParams {
  double v0 = 33.3;    ///< desired speed [m/s]
  double s0 = 2.0;     ///< jam spacing [m]
  double T = 1.6;      ///< safe time headway [s]
  double alpha = 0.73; ///< maximum acceleration [m/s^2]
  double beta = 1.67;  ///< comfortable deceleration [m/s^2]
  double delta = 4.0;  ///< acceleration exponent, never sampled
  double s1 = 0.0;     ///< gap coefficient [m], never sampled

  static constexpr std::size_t kNumFree = 5;

  static IdmParams recommended() { return {}; }

  /// Builds from the free vector [v0, s0, T, alpha, beta].
  static IdmParams from_array(const std::array<double, kNumFree>& a,
                              double delta = 4.0, double s1 = 0.0) {
    return {a[0], a[1], a[2], a[3], a[4], delta, s1};
  }

  std::array<double, kNumFree> to_array() const { return {v0, s0, T, alpha, beta}; }

  bool valid() const {
    const auto pos = [](double x) { return std::isfinite(x) && x > 0.0; };
    return pos(v0) && pos(s0) && pos(T) && pos(alpha) && pos(beta) && pos(delta) &&
           std::isfinite(s1) && s1 >= 0.0;
  }

  void validate() const {
    if (!valid()) throw InvalidArgument("IdmParams: v0, s0, T, alpha, beta, delta must be finite and > 0, s1 >= 0");
  }
};

inline constexpr std::array<const char*, IdmParams::kNumFree> kThetaNames = {"v0", "s0", "T", "alpha", "beta"};

struct KinematicState {
  double x = 0.0;  ///< front-bumper position [m]
  double v = 0.0;  ///< speed [m/s]
};

/// Car-following stimulus: gap, own speed, approach rate (v - v_lead).
struct CfInput {
  double s;
  double v;
  double dv;
};

namespace detail {

inline double desired_gap_unchecked(double v, double dv, const IdmParams& p) {
  double g = p.s0 + v * p.T + v * dv / (2.0 * std::sqrt(p.alpha * p.beta));
  if (p.s1 != 0.0) g += p.s1 * std::sqrt(v / p.v0);
  return g;
}

inline double accel_unchecked(double s, double v, double dv, const IdmParams& p) {
  const double ratio = v / p.v0;
  const double free_term = p.delta == 4.0 ? (ratio * ratio) * (ratio * ratio) : std::pow(ratio, p.delta);
  const double gap_ratio = desired_gap_unchecked(v, dv, p) / s;
  return p.alpha * (1.0 - free_term - gap_ratio * gap_ratio);
}

inline void check_finite(const CfInput& in) {
  if (!std::isfinite(in.s) || !std::isfinite(in.v) || !std::isfinite(in.dv))
    throw InvalidArgument("IDM input must be finite");
}

}  // namespace detail

/// s* = s0 + s1 sqrt(v/v0) + v T + v dv / (2 sqrt(alpha beta)). Can be negative.
inline double desired_gap(const CfInput& in, const IdmParams& p) {
  detail::check_finite(in);
  p.validate();
  return detail::desired_gap_unchecked(in.v, in.dv, p);
}

/// alpha (1 - (v/v0)^delta - (s*/s)^2). Throws DomainError for s <= 0.
inline double idm_acceleration(const CfInput& in, const IdmParams& p) {
  detail::check_finite(in);
  p.validate();
  if (in.s <= 0.0) throw DomainError("idm_acceleration: non-positive gap (collision state)");
  return detail::accel_unchecked(in.s, in.v, in.dv, p);
}

/// Ballistic update. Speed is clamped at zero and the clamped value enters
/// the trapezoidal position update.
inline KinematicState step(const KinematicState& st, double accel, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidArgument("step: dt must be finite and > 0");
  if (!std::isfinite(st.x) || !std::isfinite(st.v) || !std::isfinite(accel))
    throw InvalidArgument("step: non-finite state or acceleration");
  double v_next = st.v + accel * dt;
  if (v_next < 0.0) v_next = 0.0;
  return {st.x + 0.5 * (v_next + st.v) * dt, v_next};
}

/// Gap at which a follower at speed v behind an equal-speed leader has zero
/// acceleration. Requires 0 <= v < v0.
inline double equilibrium_gap(double v, const IdmParams& p) {
  p.validate();
  if (!(v >= 0.0) || !(v < p.v0)) throw InvalidArgument("equilibrium_gap: need 0 <= v < v0");
  const double s_star = detail::desired_gap_unchecked(v, 0.0, p);
  const double free_term = std::pow(v / p.v0, p.delta);
  return s_star / std::sqrt(1.0 - free_term);
}

/// Speed in [0, v0) at which `gap` is the equilibrium gap (bisection).
inline double equilibrium_speed(double gap, const IdmParams& p) {
  p.validate();
  if (!(gap > 0.0)) throw InvalidArgument("equilibrium_speed: gap must be > 0");
  if (detail::accel_unchecked(gap, 0.0, 0.0, p) <= 0.0) return 0.0;
  double lo = 0.0, hi = p.v0;
  for (int i = 0; i < 200 && hi - lo > 1e-13 * p.v0; ++i) {
    const double mid = 0.5 * (lo + hi);
    (detail::accel_unchecked(gap, mid, 0.0, p) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Recorded leader channel on a uniform grid.
struct LeaderTrack {
  double dt = 0.0;
  double leader_length = 0.0;
  std::vector<double> x;  ///< leader front-bumper position
  std::vector<double> v;

  std::size_t size() const { return x.size(); }

  void validate() const {
    if (!(dt > 0.0)) throw InvalidArgument("LeaderTrack: dt must be > 0");
    if (x.size() != v.size()) throw InvalidArgument("LeaderTrack: x and v lengths differ");
    if (x.empty()) throw InvalidArgument("LeaderTrack: empty");
    if (!(leader_length >= 0.0)) throw InvalidArgument("LeaderTrack: negative leader length");
  }
};

/// Simulated follower trajectory. `a[k]` is the acceleration commanded at
/// state k (IDM term plus any forcing).
struct Trajectory {
  double dt = 0.0;
  std::vector<double> t;
  std::vector<double> x;
  std::vector<double> v;
  std::vector<double> a;
  std::vector<double> s;
  bool collided = false;
  std::size_t collision_step = 0;  ///< first step index with gap <= 0, valid if collided

  std::size_t size() const { return t.size(); }
};

/// Rolls the follower against the recorded leader, adding `forcing[k]` to the
/// IDM acceleration at step k. An empty span means no forcing. A gap <= 0
/// truncates the trajectory before that state and raises the collision flag.
inline Trajectory rollout_forced(const LeaderTrack& leader, const KinematicState& init,
                                 const IdmParams& p, std::span<const double> forcing,
                                 std::size_t max_steps = static_cast<std::size_t>(-1)) {
  leader.validate();
  p.validate();
  const std::size_t n = std::min(leader.size(), max_steps);
  if (!forcing.empty() && forcing.size() < n) throw InvalidArgument("rollout: forcing shorter than horizon");
  const double dt = leader.dt;

  Trajectory out;
  out.dt = dt;
  out.t.reserve(n);
  out.x.reserve(n);
  out.v.reserve(n);
  out.a.reserve(n);
  out.s.reserve(n);

  KinematicState st = init;
  double gap = leader.x[0] - st.x - leader.leader_length;
  if (!(gap > 0.0)) throw InvalidArgument("rollout: initial gap must be > 0");
  for (std::size_t k = 0; k < n; ++k) {
    double acc = detail::accel_unchecked(gap, st.v, st.v - leader.v[k], p);
    if (!forcing.empty()) acc += forcing[k];
    out.t.push_back(static_cast<double>(k) * dt);
    out.x.push_back(st.x);
    out.v.push_back(st.v);
    out.a.push_back(acc);
    out.s.push_back(gap);
    if (k + 1 == n) break;
    st = step(st, acc, dt);
    gap = leader.x[k + 1] - st.x - leader.leader_length;
    if (!(gap > 0.0)) {
      out.collided = true;
      out.collision_step = k + 1;
      break;
    }
  }
  return out;
}

inline Trajectory rollout_deterministic(const LeaderTrack& leader, const KinematicState& init,
                                        const IdmParams& p,
                                        std::size_t max_steps = static_cast<std::size_t>(-1)) {
  return rollout_forced(leader, init, p, {}, max_steps);
}

}  // namespace maidm
