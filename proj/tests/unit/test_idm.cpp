#include <gtest/gtest.h>

#include <boost/math/tools/roots.hpp>
#include <cmath>
#include <limits>

#include "maidm/idm.hpp"

using namespace maidm;

namespace {

const IdmParams kRec = IdmParams::recommended();

// Leader cruising at constant speed from x0.
LeaderTrack constant_leader(double v, double x0, std::size_t n, double dt, double length = 5.0) {
  LeaderTrack lt{dt, length, {}, {}};
  for (std::size_t k = 0; k < n; ++k) {
    lt.x.push_back(x0 + v * dt * static_cast<double>(k));
    lt.v.push_back(v);
  }
  return lt;
}

// Independent equilibrium: root of a(s) = 0 in s by bisection.
double equilibrium_gap_by_root(double v, const IdmParams& p) {
  auto f = [&](double s) { return detail::accel_unchecked(s, v, 0.0, p); };
  boost::math::tools::eps_tolerance<double> tol(50);
  auto r = boost::math::tools::bisect(f, 1e-3, 1e4, tol);
  return 0.5 * (r.first + r.second);
}

}  // namespace

TEST(IdmParams, RecommendedValues) {
  EXPECT_DOUBLE_EQ(kRec.v0, 33.3);
  EXPECT_DOUBLE_EQ(kRec.s0, 2.0);
  EXPECT_DOUBLE_EQ(kRec.T, 1.6);
  EXPECT_DOUBLE_EQ(kRec.alpha, 0.73);
  EXPECT_DOUBLE_EQ(kRec.beta, 1.67);
  EXPECT_DOUBLE_EQ(kRec.delta, 4.0);
  EXPECT_DOUBLE_EQ(kRec.s1, 0.0);
}

TEST(IdmParams, ValidateRejectsNonPositive) {
  IdmParams p = kRec;
  p.T = 0.0;
  EXPECT_THROW(p.validate(), InvalidArgument);
  p = kRec;
  p.alpha = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(p.validate(), InvalidArgument);
}

TEST(IdmParams, ArrayRoundTrip) {
  const auto a = kRec.to_array();
  const auto p = IdmParams::from_array(a);
  EXPECT_EQ(p.to_array(), a);
}

TEST(DesiredGap, StandstillIsS0) { EXPECT_DOUBLE_EQ(desired_gap({10.0, 0.0, 0.0}, kRec), 2.0); }

TEST(DesiredGap, SteadyFollowing) { EXPECT_NEAR(desired_gap({10.0, 20.0, 0.0}, kRec), 34.0, 1e-12); }

TEST(DesiredGap, Closing) {
  const double expected = 34.0 + 40.0 / (2.0 * std::sqrt(0.73 * 1.67));
  EXPECT_NEAR(desired_gap({10.0, 20.0, 2.0}, kRec), expected, 1e-12);
  EXPECT_NEAR(desired_gap({10.0, 20.0, 2.0}, kRec), 52.114, 1e-3);
}

TEST(DesiredGap, NegativeForStrongOpening) { EXPECT_LT(desired_gap({10.0, 20.0, -10.0}, kRec), 0.0); }

TEST(DesiredGap, S1Term) {
  IdmParams p = kRec;
  p.s1 = 3.0;
  EXPECT_NEAR(desired_gap({10.0, 20.0, 0.0}, p), 34.0 + 3.0 * std::sqrt(20.0 / 33.3), 1e-12);
}

TEST(DesiredGap, NonFiniteInputThrows) {
  EXPECT_THROW(desired_gap({10.0, std::numeric_limits<double>::infinity(), 0.0}, kRec), InvalidArgument);
}

TEST(IdmAcceleration, FreeRoadAtDesiredSpeed) { EXPECT_LT(std::abs(idm_acceleration({1e9, 33.3, 0.0}, kRec)), 1e-6); }

TEST(IdmAcceleration, StandstillLargeGap) {
  EXPECT_NEAR(idm_acceleration({100.0, 0.0, 0.0}, kRec), 0.73 * (1.0 - 0.02 * 0.02), 1e-12);
  EXPECT_NEAR(idm_acceleration({100.0, 0.0, 0.0}, kRec), 0.729708, 1e-6);
}

TEST(IdmAcceleration, EquilibriumGapGivesZero) {
  EXPECT_NEAR(idm_acceleration({36.454, 20.0, 0.0}, kRec), 0.0, 1e-3);
}

TEST(IdmAcceleration, NonPositiveGapIsDomainError) {
  EXPECT_THROW(idm_acceleration({0.0, 10.0, 0.0}, kRec), DomainError);
  EXPECT_THROW(idm_acceleration({-1.0, 10.0, 0.0}, kRec), DomainError);
}

TEST(IdmAcceleration, MonotoneInGap) {
  double prev = -std::numeric_limits<double>::infinity();
  for (double s = 1.0; s < 200.0; s += 0.5) {
    const double a = idm_acceleration({s, 15.0, 0.0}, kRec);
    EXPECT_GT(a, prev);
    prev = a;
  }
}

// Holds where s* >= 0; below that s* enters squared and the order flips.
TEST(IdmAcceleration, MonotoneInApproachRate) {
  double prev = std::numeric_limits<double>::infinity();
  for (double dv = -3.5; dv <= 5.0; dv += 0.25) {
    ASSERT_GE(desired_gap({30.0, 15.0, dv}, kRec), 0.0);
    const double a = idm_acceleration({30.0, 15.0, dv}, kRec);
    EXPECT_LT(a, prev);
    prev = a;
  }
}

TEST(IdmAcceleration, MonotoneInSpeed) {
  double prev = std::numeric_limits<double>::infinity();
  for (double v = 0.5; v < 33.0; v += 0.5) {
    const double a = idm_acceleration({40.0, v, 0.0}, kRec);
    EXPECT_LT(a, prev);
    prev = a;
  }
}

TEST(Equilibrium, ClosedFormMatchesRootFinder) {
  EXPECT_NEAR(equilibrium_gap(20.0, kRec), 36.454, 1e-3);
  for (double v : {0.5, 5.0, 12.0, 20.0, 30.0}) {
    const double s = equilibrium_gap(v, kRec);
    EXPECT_NEAR(s, equilibrium_gap_by_root(v, kRec), 1e-9 * s);
    EXPECT_NEAR(idm_acceleration({s, v, 0.0}, kRec), 0.0, 1e-9);
  }
}

TEST(Equilibrium, SpeedInvertsGap) {
  for (double v : {1.0, 8.0, 20.0, 31.0}) EXPECT_NEAR(equilibrium_speed(equilibrium_gap(v, kRec), kRec), v, 1e-9);
  EXPECT_EQ(equilibrium_speed(1.5, kRec), 0.0);
  EXPECT_THROW(equilibrium_gap(40.0, kRec), InvalidArgument);
}

TEST(Step, UniformMotion) {
  const auto s = step({0.0, 10.0}, 0.0, 0.5);
  EXPECT_DOUBLE_EQ(s.v, 10.0);
  EXPECT_DOUBLE_EQ(s.x, 5.0);
}

TEST(Step, ConstantAcceleration) {
  const auto s = step({0.0, 10.0}, 1.0, 0.04);
  EXPECT_NEAR(s.v, 10.04, 1e-12);
  EXPECT_NEAR(s.x, 0.4008, 1e-12);
}

TEST(Step, ClampsAtZeroSpeed) {
  const auto s = step({0.0, 0.1}, -1.0, 0.5);
  EXPECT_EQ(s.v, 0.0);
  EXPECT_NEAR(s.x, 0.025, 1e-12);
}

TEST(Step, AffineInDtForConstantAccel) {
  const double a = 0.7, v = 3.0;
  for (double dt : {0.1, 0.2, 0.4}) EXPECT_NEAR(step({1.0, v}, a, dt).x, 1.0 + v * dt + 0.5 * a * dt * dt, 1e-12);
}

TEST(Step, RejectsBadInput) {
  EXPECT_THROW(step({0.0, 1.0}, 0.0, 0.0), InvalidArgument);
  EXPECT_THROW(step({0.0, 1.0}, std::numeric_limits<double>::quiet_NaN(), 0.1), InvalidArgument);
}

TEST(Rollout, HoldsEquilibrium) {
  const double dt = 0.1;
  const double gap = equilibrium_gap(20.0, kRec);
  const auto leader = constant_leader(20.0, gap + 5.0, 1001, dt);
  const auto tr = rollout_deterministic(leader, {0.0, 20.0}, kRec);
  ASSERT_EQ(tr.size(), 1001u);
  EXPECT_FALSE(tr.collided);
  for (std::size_t k = 0; k < tr.size(); ++k) {
    EXPECT_NEAR(tr.v[k], 20.0, 1e-3);
    EXPECT_NEAR(tr.s[k], 36.454, 0.01);
  }
}

TEST(Rollout, OneStepIsComposition) {
  const double dt = 0.2;
  const auto leader = constant_leader(15.0, 40.0, 2, dt);
  const KinematicState init{0.0, 15.0};
  const auto tr = rollout_deterministic(leader, init, kRec);
  const double a = idm_acceleration({35.0, 15.0, 0.0}, kRec);
  const auto next = step(init, a, dt);
  ASSERT_EQ(tr.size(), 2u);
  EXPECT_DOUBLE_EQ(tr.a[0], a);
  EXPECT_DOUBLE_EQ(tr.x[1], next.x);
  EXPECT_DOUBLE_EQ(tr.v[1], next.v);
}

TEST(Rollout, LeaderBrakesToStop) {
  const double dt = 0.1;
  LeaderTrack lt{dt, 5.0, {}, {}};
  double x = equilibrium_gap(20.0, kRec) + 5.0, v = 20.0;
  for (std::size_t k = 0; k < 1200; ++k) {
    lt.x.push_back(x);
    lt.v.push_back(v);
    const double vn = std::max(0.0, v - 2.0 * dt);
    x += 0.5 * (v + vn) * dt;
    v = vn;
  }
  const auto tr = rollout_deterministic(lt, {0.0, 20.0}, kRec);
  EXPECT_FALSE(tr.collided);
  EXPECT_LT(tr.v.back(), 1e-2);
  EXPECT_GE(tr.s.back(), kRec.s0 / 2.0);
}

TEST(Rollout, CollisionIsFlaggedAndTruncated) {
  // Stopped leader 1 m ahead of a follower at 20 m/s: even a full stop within
  // one 0.5 s step still covers v dt / 2 = 5 m.
  const double dt = 0.5;
  const auto leader = constant_leader(0.0, 6.0, 200, dt);
  const auto tr = rollout_deterministic(leader, {0.0, 20.0}, kRec);
  EXPECT_TRUE(tr.collided);
  EXPECT_EQ(tr.size(), tr.collision_step);
  EXPECT_LT(tr.size(), 200u);
  for (double s : tr.s) EXPECT_GT(s, 0.0);
}

TEST(Rollout, BitIdenticalReruns) {
  const auto leader = constant_leader(12.0, 30.0, 500, 0.2);
  const auto a = rollout_deterministic(leader, {0.0, 5.0}, kRec);
  const auto b = rollout_deterministic(leader, {0.0, 5.0}, kRec);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.v, b.v);
}

TEST(Rollout, ForcingShiftsAcceleration) {
  const auto leader = constant_leader(12.0, 30.0, 50, 0.2);
  std::vector<double> f(50, 0.1);
  const auto a = rollout_deterministic(leader, {0.0, 12.0}, kRec);
  const auto b = rollout_forced(leader, {0.0, 12.0}, kRec, f);
  EXPECT_NEAR(b.a[0] - a.a[0], 0.1, 1e-12);
  std::vector<double> short_f(10, 0.0);
  EXPECT_THROW(rollout_forced(leader, {0.0, 12.0}, kRec, short_f), InvalidArgument);
}

TEST(Rollout, InitialOverlapRejected) {
  const auto leader = constant_leader(12.0, 4.0, 10, 0.2);
  EXPECT_THROW(rollout_deterministic(leader, {0.0, 12.0}, kRec), InvalidArgument);
}
