#include <gtest/gtest.h>

#include <cmath>

#include "voterlab/dual_coalescer.hpp"
#include "voterlab/estimators.hpp"
#include "voterlab/forward_voter.hpp"

using namespace voterlab;

namespace {
StreamSource streams(std::uint64_t experiment) { return {777, experiment}; }

TorusConfig torus(std::int32_t side, double horizon, double rho) {
  TorusConfig c;
  c.side = side;
  c.horizon = horizon;
  c.rho = rho;
  return c;
}
}  // namespace

TEST(TorusConfig, GuardAndValidation) {
  EXPECT_TRUE(torus(32, 16, 0.5).large_enough());
  EXPECT_FALSE(torus(32, 17, 0.5).large_enough());
  EXPECT_THROW(torus(3, 1, 0.5).validate(), std::invalid_argument);
  EXPECT_THROW(torus(8, 1, 1.5).validate(), std::invalid_argument);
  EXPECT_THROW(torus(8, -1, 0.5).validate(), std::invalid_argument);
}

TEST(TorusGeometry, NeighboursWrap) {
  const TorusGeometry g(8);
  EXPECT_EQ(g.sites(), 64u);
  EXPECT_EQ(g.neighbour(0, 0), 1u);   // east
  EXPECT_EQ(g.neighbour(0, 1), 7u);   // west wraps
  EXPECT_EQ(g.neighbour(0, 2), 8u);   // north
  EXPECT_EQ(g.neighbour(0, 3), 56u);  // south wraps
}

TEST(InitBernoulli, Extremes) {
  Xoshiro256 rng(1);
  EXPECT_EQ(init_bernoulli(torus(16, 1, 0.0), rng).ones(), 0u);
  EXPECT_EQ(init_bernoulli(torus(16, 1, 1.0), rng).ones(), 256u);
  const auto s = init_bernoulli(torus(16, 1, 0.3), rng);
  EXPECT_EQ(s.clock, 0.0);
  EXPECT_EQ(s.origin_occupation, 0.0);
}

TEST(InitBernoulli, HalfDensityConcentration) {
  Xoshiro256 rng(2);
  const auto s = init_bernoulli(torus(32, 1, 0.5), rng);
  const double mean = static_cast<double>(s.ones()) / 1024.0;
  EXPECT_GE(mean, 0.5 - 4 * 0.5 / 32);
  EXPECT_LE(mean, 0.5 + 4 * 0.5 / 32);
}

TEST(Evolve, ConsensusIsAbsorbing) {
  for (double rho : {0.0, 1.0}) {
    Xoshiro256 rng(3);
    auto s = init_bernoulli(torus(16, 10, rho), rng);
    evolve_in_place(s, 10.0, rng);
    EXPECT_EQ(s.ones(), rho == 1.0 ? 256u : 0u);
    EXPECT_NEAR(s.origin_occupation, rho * 10.0, 1e-9);
    EXPECT_DOUBLE_EQ(s.clock, 10.0);
  }
}

TEST(Evolve, RejectsGoingBack) {
  Xoshiro256 rng(4);
  auto s = init_bernoulli(torus(8, 2, 0.5), rng);
  evolve_in_place(s, 1.0, rng);
  EXPECT_THROW(evolve_in_place(s, 0.5, rng), std::invalid_argument);
}

TEST(Evolve, OccupationIsMonotoneAndLipschitz) {
  Xoshiro256 rng(5);
  auto s = init_bernoulli(torus(16, 20, 0.5), rng);
  double last_clock = 0, last_occ = 0;
  evolve_in_place(s, 20.0, rng, [&](const ForwardState& st, ForwardEvent) {
    EXPECT_GE(st.origin_occupation, last_occ - 1e-12);
    EXPECT_LE(st.origin_occupation - last_occ, st.clock - last_clock + 1e-12);
    EXPECT_LE(st.origin_occupation, st.clock + 1e-12);
    last_clock = st.clock;
    last_occ = st.origin_occupation;
    return false;
  });
  EXPECT_DOUBLE_EQ(s.clock, 20.0);
}

TEST(Evolve, OccupationMatchesTimeSampledIntegral) {
  // Origin opinion sampled on a fine grid integrates to origin_occupation.
  Xoshiro256 rng(6);
  auto s = init_bernoulli(torus(16, 5, 0.5), rng);
  auto copy = s;
  Xoshiro256 rng2 = rng;
  evolve_in_place(s, 5.0, rng);
  double integral = 0.0;
  double last = 0.0;
  bool value = copy.origin();
  evolve_in_place(copy, 5.0, rng2, [&](const ForwardState& st, ForwardEvent e) {
    if (e == ForwardEvent::kOriginChange) {
      if (value) integral += st.clock - last;
      last = st.clock;
      value = st.origin();
    }
    return false;
  });
  if (value) integral += 5.0 - last;
  EXPECT_NEAR(s.origin_occupation, integral, 1e-9);
}

TEST(Evolve, MarginalIsConserved) {
  const double rho = 0.3;
  const int n = 20000;
  std::int64_t ones = 0;
  for (int i = 0; i < n; ++i) {
    auto rng = make_stream(7, 0, static_cast<std::uint64_t>(i));
    auto s = init_bernoulli(torus(16, 4, rho), rng);
    evolve_in_place(s, 4.0, rng);
    ones += s.origin();
  }
  const auto e = indicator_estimate(ones, n);
  EXPECT_NEAR(e.mean, rho, 4.0 * e.std_error);
}

TEST(Evolve, MonotoneCouplingInDensity) {
  for (int i = 0; i < 200; ++i) {
    auto a = make_stream(8, 0, static_cast<std::uint64_t>(i));
    auto b = a;
    auto lo = init_bernoulli(torus(16, 8, 0.3), a);
    auto hi = init_bernoulli(torus(16, 8, 0.6), b);
    for (std::size_t k = 0; k < lo.eta.size(); ++k) ASSERT_LE(lo.eta[k], hi.eta[k]);
    evolve_in_place(lo, 8.0, a);
    evolve_in_place(hi, 8.0, b);
    for (std::size_t k = 0; k < lo.eta.size(); ++k) ASSERT_LE(lo.eta[k], hi.eta[k]);
    EXPECT_LE(lo.origin_occupation, hi.origin_occupation + 1e-12);
  }
}

TEST(Evolve, SingleDissenterSurvivalIsSeedStable) {
  // One 1 at the origin of an 8-torus: chance a 1 remains at time 1. No
  // closed form; two independent seeds must agree.
  auto survival = [](std::uint64_t seed) {
    std::int64_t alive = 0;
    const int n = 40000;
    for (int i = 0; i < n; ++i) {
      auto rng = make_stream(seed, 0, static_cast<std::uint64_t>(i));
      ForwardState s;
      s.geometry = TorusGeometry::get(8);
      s.eta.assign(64, 0);
      s.eta[kTorusOrigin] = 1;
      evolve_in_place(s, 1.0, rng);
      alive += s.ones() > 0;
    }
    return indicator_estimate(alive, n);
  };
  const auto a = survival(100);
  const auto b = survival(200);
  EXPECT_TRUE(agree_within(a.mean, a.std_error, b.mean, b.std_error, 4.0));
  EXPECT_GT(a.mean, std::exp(-1.0));  // at least: the origin never resampled
  EXPECT_LT(a.mean, 1.0);
}

TEST(ForwardPersistence, Extremes) {
  const auto one = forward_persistence_mc(torus(16, 5, 1.0), 200, streams(1));
  EXPECT_EQ(one.mean, 1.0);
  const auto zero_time = forward_persistence_mc(torus(16, 0, 0.4), 20000, streams(2));
  EXPECT_NEAR(zero_time.mean, 0.4, 4.0 * zero_time.std_error);
}

TEST(ForwardPersistence, FewHitsFlag) {
  const auto e = forward_persistence_mc(torus(16, 16, 0.5), 50, streams(3));
  EXPECT_TRUE(e.has_flag(kFlagFewHits));
  const auto small = forward_persistence_mc(torus(8, 16, 0.5), 50, streams(3));
  EXPECT_TRUE(small.has_flag(kFlagTorusTooSmall));
}

TEST(ForwardTail, TinyLevelMissesOnlyZeroPersistence) {
  // T_t >= 1e-9 t fails only if the origin holds 0 throughout, which at
  // rho = 1/2 has the persistence probability by symmetry.
  const auto cfg = torus(32, 16, 0.5);
  const auto e = forward_tail_mc(cfg, 1e-9, 100000, streams(4));
  const auto p = forward_persistence_mc(cfg, 100000, streams(40));
  EXPECT_GT(e.mean, 0.95);
  EXPECT_NEAR(e.mean, 1.0 - p.mean, 4.0 * combined_stderr(e.std_error, p.std_error));
}

TEST(ForwardTail, LevelOneEqualsPersistence) {
  const auto cfg = torus(16, 6, 0.5);
  const auto tail = forward_tail_mc(cfg, 1.0, 20000, streams(5));
  const auto pers = forward_persistence_mc(cfg, 20000, streams(5));
  EXPECT_EQ(tail.mean, pers.mean);
}

TEST(ForwardTail, RejectsBadLevel) {
  EXPECT_THROW(forward_tail_mc(torus(16, 4, 0.5), 0.0, 10, streams(6)), std::invalid_argument);
  EXPECT_THROW(forward_tail_mc(torus(16, 4, 0.5), 1.5, 10, streams(6)), std::invalid_argument);
}

TEST(ForwardTail, NonIncreasingInLevel) {
  const auto cfg = torus(16, 8, 0.5);
  const auto a = forward_tail_mc(cfg, 0.6, 20000, streams(7));
  const auto b = forward_tail_mc(cfg, 0.9, 20000, streams(7));
  EXPECT_GE(a.mean, b.mean);
}

TEST(ForwardCovariance, EqualTimesGiveBernoulliVariance) {
  const auto cfg = torus(16, 8, 0.5);
  const auto c = forward_covariance_mc(cfg, 3.0, 3.0, 40000, streams(8));
  EXPECT_NEAR(c.covariance, 0.25, 4.0 * c.std_error + 1e-3);
}

TEST(ForwardCovariance, LongSeparationNonNegative) {
  const auto cfg = torus(32, 16, 0.5);
  const auto c = forward_covariance_mc(cfg, 0.0, 16.0, 40000, streams(9));
  EXPECT_GE(c.covariance, -3.0 * c.std_error);
  EXPECT_LT(c.covariance, 0.25);
}

TEST(ForwardCovariance, MatchesDualMeetingProbability) {
  const double rho = 0.5, s = 2.0, s2 = 6.0;
  const auto cfg = torus(32, 16, rho);
  const auto fwd = forward_covariance_mc(cfg, s, s2, 100000, streams(10));
  // Dual: horizon s2; points chi_s and chi_s2 share a lineage.
  std::int64_t same = 0;
  const int n = 100000;
  DualCoalescer dual;
  for (int i = 0; i < n; ++i) {
    auto rng = make_stream(11, 0, static_cast<std::uint64_t>(i));
    const auto sample = dual.simulate(s2, rng);
    same += lineage_of_point(sample, s) == lineage_of_point(sample, s2);
  }
  const auto meet = indicator_estimate(same, n);
  const double predicted = rho * (1 - rho) * meet.mean;
  EXPECT_TRUE(agree_within(fwd.covariance, fwd.std_error, predicted, rho * (1 - rho) * meet.std_error, 4.0))
      << fwd.covariance << " vs " << predicted;
}

TEST(ForwardCovariance, Preconditions) {
  const auto cfg = torus(16, 8, 0.5);
  EXPECT_THROW(forward_covariance_mc(cfg, 3, 2, 10, streams(11)), std::invalid_argument);
  EXPECT_THROW(forward_covariance_mc(cfg, 1, 9, 10, streams(11)), std::invalid_argument);
}

TEST(Forward, WorkerInvariance) {
  const auto cfg = torus(16, 6, 0.5);
  RunOptions four;
  four.workers = 4;
  EXPECT_EQ(forward_persistence_mc(cfg, 3000, streams(12)).mean,
            forward_persistence_mc(cfg, 3000, streams(12), four).mean);
}
