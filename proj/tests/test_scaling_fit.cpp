#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "voterlab/rng.hpp"
#include "voterlab/scaling_fit.hpp"
#include "voterlab/statistics.hpp"

using namespace voterlab;

namespace {
std::vector<ScalingPoint> grid(auto&& p_of_t) {
  std::vector<ScalingPoint> pts;
  for (double e : {2.0, 2.5, 3.0, 3.5, 4.0}) {
    const double t = std::pow(10.0, e);
    pts.push_back({t, p_of_t(t), 0.0});
  }
  return pts;
}
}  // namespace

TEST(FitScaling, PowerLawIsExactInLogModel) {
  const auto pts = grid([](double t) { return 1.0 / (t * t); });
  const auto f = fit_scaling(pts, ScalingModel::kLog);
  EXPECT_NEAR(f.slope, 2.0, 1e-10);
  EXPECT_NEAR(f.intercept, 0.0, 1e-9);
  EXPECT_NEAR(f.r_squared, 1.0, 1e-10);
  EXPECT_EQ(f.n_points(), 5u);
}

TEST(FitScaling, LogSquaredDecayIsExactInLogSquaredModel) {
  const auto pts = grid([](double t) { return std::exp(-0.3 * std::log(t) * std::log(t)); });
  const auto sq = fit_scaling(pts, ScalingModel::kLogSquared);
  const auto lin = fit_scaling(pts, ScalingModel::kLog);
  EXPECT_NEAR(sq.slope, 0.3, 1e-10);
  EXPECT_NEAR(sq.r_squared, 1.0, 1e-10);
  EXPECT_LT(lin.r_squared, sq.r_squared);
  EXPECT_TRUE(convex_residual_pattern(lin.residuals));
}

TEST(FitScaling, PowerLawResidualsAreNotConvex) {
  // Concave curve in log t: log model residuals have the opposite pattern.
  const auto pts = grid([](double t) { return std::exp(-3.0 * std::sqrt(std::log(t))); });
  const auto lin = fit_scaling(pts, ScalingModel::kLog);
  EXPECT_FALSE(convex_residual_pattern(lin.residuals));
}

TEST(FitScaling, ZeroEstimatesAreDroppedWithWarning) {
  auto pts = grid([](double t) { return 1.0 / t; });
  pts.push_back({1e5, 0.0, 0.0});
  const auto f = fit_scaling(pts, ScalingModel::kLog);
  EXPECT_EQ(f.n_points(), 5u);
  ASSERT_EQ(f.warnings.size(), 1u);
  EXPECT_NE(f.warnings[0].find("p_hat = 0"), std::string::npos);
}

TEST(FitScaling, Preconditions) {
  std::vector<ScalingPoint> two{{10, 0.1, 0.01}, {100, 0.01, 0.001}};
  EXPECT_THROW(fit_scaling(two, ScalingModel::kLog), std::invalid_argument);
  std::vector<ScalingPoint> same{{10, 0.1, 0.01}, {10, 0.2, 0.01}, {10, 0.3, 0.01}};
  EXPECT_THROW(fit_scaling(same, ScalingModel::kLog), std::invalid_argument);
  std::vector<ScalingPoint> bad_t{{-1, 0.1, 0.01}, {10, 0.2, 0.01}, {100, 0.3, 0.01}};
  EXPECT_THROW(fit_scaling(bad_t, ScalingModel::kLog), std::invalid_argument);
  EXPECT_THROW(parse_scaling_model("cubic"), std::invalid_argument);
  EXPECT_EQ(parse_scaling_model("log^2"), ScalingModel::kLogSquared);
}

TEST(FitScaling, DeltaMethodAgreesWithBootstrap) {
  // p_hat = fraction of hits among n Bernoulli(p) draws; the delta-method
  // stderr of -log p_hat should match its spread over repetitions.
  const double p = 0.02;
  const int n = 20000;
  Xoshiro256 rng(17);
  RunningStats neg_log;
  RunningStats delta;
  for (int rep = 0; rep < 400; ++rep) {
    std::int64_t hits = 0;
    for (int i = 0; i < n; ++i) hits += rng.bernoulli(p);
    const auto e = indicator_estimate(hits, n);
    neg_log.push(-std::log(e.mean));
    delta.push(neg_log_std_error(e.mean, e.std_error));
  }
  EXPECT_NEAR(delta.mean() / std::sqrt(neg_log.variance()), 1.0, 0.2);
}

TEST(ConvexPattern, Checker) {
  EXPECT_TRUE(convex_residual_pattern(std::vector<double>{1, -1, -2, -1, 1}));
  EXPECT_FALSE(convex_residual_pattern(std::vector<double>{-1, 1, 2, 1, -1}));
  EXPECT_FALSE(convex_residual_pattern(std::vector<double>{1, -1, 1, -1, 1}));
  EXPECT_FALSE(convex_residual_pattern(std::vector<double>{1, 0, -1, -1, 1}));
  EXPECT_FALSE(convex_residual_pattern(std::vector<double>{1, -1}));
}
