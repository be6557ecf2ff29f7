#pragma once

// Simple random walk on Z^2 in continuous time: rate-1 exponential holding
// times, each jump to one of the four nearest neighbours. This matches the
// voter generator, where every ordered neighbour pair fires at rate 1/4.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "voterlab/replica_farm.hpp"
#include "voterlab/rng.hpp"
#include "voterlab/site.hpp"
#include "voterlab/statistics.hpp"

namespace voterlab {

// Position after `duration`, jumping event by event. If `path` is given it
// receives the start site followed by every visited site.
template <typename Rng>
Site sample_srw(Site start, double duration, Rng& rng, std::vector<Site>* path = nullptr) {
  if (!(duration >= 0.0)) throw std::invalid_argument("sample_srw: negative duration");
  if (path) {
    path->clear();
    path->push_back(start);
  }
  Site pos = start;
  double clock = rng.exponential(1.0);
  while (clock <= duration) {
    pos = pos + kSteps[rng() & 3u];
    if (path) path->push_back(pos);
    clock += rng.exponential(1.0);
  }
  return pos;
}

// Same law as sample_srw's endpoint, drawn in O(1). The two coordinates of a
// rate-1 planar walk are independent rate-1/2 walks on Z (Poisson thinning);
// each is 2 * Binomial(n, 1/2) - n after n ~ Poisson(duration / 2) jumps.
template <typename Rng>
Site sample_srw_endpoint(Site start, double duration, Rng& rng) {
  if (!(duration >= 0.0)) throw std::invalid_argument("sample_srw_endpoint: negative duration");
  if (duration == 0.0) return start;
  auto coordinate = [&] {
    std::poisson_distribution<std::int64_t> jumps(duration / 2.0);
    const std::int64_t n = jumps(rng);
    if (n == 0) return std::int64_t{0};
    std::binomial_distribution<std::int64_t> ups(n, 0.5);
    return 2 * ups(rng) - n;
  };
  const auto dx = coordinate();
  const auto dy = coordinate();
  return {start.x + static_cast<std::int32_t>(dx), start.y + static_cast<std::int32_t>(dy)};
}

// P^x(tau_0 < sigma_radius): fraction of walks from x that reach the origin
// before |X| >= radius. Holding times do not affect the event, so the
// embedded jump chain is walked.
inline ProbEstimate hit_origin_before_exit_mc(Site x, double radius, std::int64_t replicas,
                                              const StreamSource& streams,
                                              const RunOptions& options = {}) {
  if (x.is_origin()) throw std::invalid_argument("hit_origin_before_exit_mc: start at origin");
  if (!(x.norm() < radius)) throw std::invalid_argument("hit_origin_before_exit_mc: |x| >= radius");
  if (replicas < 1) throw std::invalid_argument("hit_origin_before_exit_mc: replicas < 1");
  const double r2 = radius * radius;
  const auto hits = map_replicas<std::uint8_t>(
      static_cast<std::size_t>(replicas), options.workers, [&](std::size_t i) -> std::uint8_t {
        auto rng = streams.at(i);
        Site pos = x;
        for (;;) {
          std::uint64_t bits = rng();
          for (int k = 0; k < 32; ++k, bits >>= 2) {
            pos = pos + kSteps[bits & 3u];
            if (pos.is_origin()) return 1;
            if (static_cast<double>(pos.norm2()) >= r2) return 0;
          }
        }
      });
  std::int64_t total = 0;
  for (auto h : hits) total += h;
  return indicator_estimate(total, replicas);
}

// Asymptotic order of P^x(tau_0 < sigma_sqrt(t)):
// (log sqrt t - log|x|) / log sqrt t, clamped to [0, 1].
inline double lawler_reference_hit_before_exit(Site x, double t) {
  if (!(t > 1.0)) throw std::invalid_argument("lawler_reference_hit_before_exit: need t > 1");
  const double r = x.norm();
  const double root = std::sqrt(t);
  if (r == 0.0 || r > root * (1.0 + 1e-12))
    throw std::invalid_argument("lawler_reference_hit_before_exit: need 0 < |x| <= sqrt(t)");
  const double log_root = std::log(root);
  return std::clamp((log_root - std::log(r)) / log_root, 0.0, 1.0);
}

// Asymptotic order of P^x(tau_0 < t):
// (log sqrt t - log|x| + 1) / log sqrt t, clamped to [0, 1].
inline double lawler_reference_hit_by_time(Site x, double t) {
  if (!(t > std::exp(2.0))) throw std::invalid_argument("lawler_reference_hit_by_time: need t > e^2");
  const double r = x.norm();
  const double root = std::sqrt(t);
  if (r == 0.0 || r > root * (1.0 + 1e-12))
    throw std::invalid_argument("lawler_reference_hit_by_time: need 0 < |x| <= sqrt(t)");
  const double log_root = std::log(root);
  return std::clamp((log_root - std::log(r) + 1.0) / log_root, 0.0, 1.0);
}

// Overload taking |x| directly, for radial grids that are not lattice points.
inline double lawler_reference_hit_before_exit(double radius_of_x, double t) {
  if (!(t > 1.0)) throw std::invalid_argument("lawler_reference_hit_before_exit: need t > 1");
  const double root = std::sqrt(t);
  if (!(radius_of_x > 0.0) || radius_of_x > root * (1.0 + 1e-12))
    throw std::invalid_argument("lawler_reference_hit_before_exit: need 0 < |x| <= sqrt(t)");
  const double log_root = std::log(root);
  return std::clamp((log_root - std::log(radius_of_x)) / log_root, 0.0, 1.0);
}

// Validity window of the two-walk meeting asymptotics: t / log t < s < t / 2.
inline bool meeting_window_valid(double s, double t) {
  return t > 1.0 && s > t / std::log(t) && s < t / 2.0;
}

// P(exists u in [s, t] : X(u) = Y(u)) for independent walks with X(0) = 0
// and Y(s) = 0. Conditional on X(s) = x this is the probability that the
// difference walk, which jumps at rate 2, hits the origin within t - s.
inline ProbEstimate meet_prob_mc(double s, double t, std::int64_t replicas,
                                 const StreamSource& streams, const RunOptions& options = {}) {
  if (!(s >= 0.0 && s <= t)) throw std::invalid_argument("meet_prob_mc: need 0 <= s <= t");
  if (replicas < 1) throw std::invalid_argument("meet_prob_mc: replicas < 1");
  const double span = t - s;
  const auto hits = map_replicas<std::uint8_t>(
      static_cast<std::size_t>(replicas), options.workers, [&](std::size_t i) -> std::uint8_t {
        auto rng = streams.at(i);
        Site diff = sample_srw_endpoint(kOrigin, s, rng);
        if (diff.is_origin()) return 1;
        double clock = rng.exponential(2.0);
        while (clock <= span) {
          diff = diff + kSteps[rng() & 3u];
          if (diff.is_origin()) return 1;
          clock += rng.exponential(2.0);
        }
        return 0;
      });
  std::int64_t total = 0;
  for (auto h : hits) total += h;
  auto estimate = indicator_estimate(total, replicas);
  if (!meeting_window_valid(s, t)) estimate.flags |= kFlagOutsideValidityWindow;
  return estimate;
}

struct AnnulusOptions {
  std::size_t runs = kDefaultBatches;  // independent splitting runs
  std::size_t stages = 16;             // equal slices of [t/4, t]
};

// P^0(|X(u)| in (sqrt t, sqrt 2t) for all u in [t/4, t]).
//
// The event has probability of order 1e-6, so plain Monte Carlo returns 0 at
// any affordable replica count. This uses fixed-effort splitting: X(t/4) is
// drawn exactly, the stay interval is cut into equal stages, and after each
// stage the survivors are resampled back to full strength. A run's estimate
// is the product of per-stage survival fractions, which is unbiased; the
// standard error comes from the spread over independent runs. `replicas` is
// the total particle count per stage, shared across runs.
inline ProbEstimate annulus_stay_prob_mc(double t, std::int64_t replicas,
                                         const StreamSource& streams,
                                         const RunOptions& options = {},
                                         const AnnulusOptions& annulus = {}) {
  if (!(std::sqrt(t) >= 10.0)) throw std::invalid_argument("annulus_stay_prob_mc: need sqrt(t) >= 10");
  if (annulus.runs < 2 || annulus.stages < 1)
    throw std::invalid_argument("annulus_stay_prob_mc: need >= 2 runs and >= 1 stage");
  const auto particles = static_cast<std::size_t>(replicas) / annulus.runs;
  if (particles < 1) throw std::invalid_argument("annulus_stay_prob_mc: replicas < runs");

  const double inner2 = t;
  const double outer2 = 2.0 * t;
  auto inside = [&](Site p) {
    const auto n2 = static_cast<double>(p.norm2());
    return n2 > inner2 && n2 < outer2;
  };
  const double stage_length = 0.75 * t / static_cast<double>(annulus.stages);

  const auto per_run = map_replicas<double>(annulus.runs, options.workers, [&](std::size_t run) {
    auto rng = streams.at(run);
    std::vector<Site> cloud;
    cloud.reserve(particles);
    for (std::size_t i = 0; i < particles; ++i) {
      const Site p = sample_srw_endpoint(kOrigin, 0.25 * t, rng);
      if (inside(p)) cloud.push_back(p);
    }
    double estimate = static_cast<double>(cloud.size()) / static_cast<double>(particles);
    std::vector<Site> next;
    next.reserve(particles);
    for (std::size_t stage = 0; stage < annulus.stages && !cloud.empty(); ++stage) {
      next.clear();
      for (std::size_t i = 0; i < particles; ++i) {
        Site pos = cloud[rng.below(static_cast<std::uint32_t>(cloud.size()))];
        bool alive = true;
        double clock = rng.exponential(1.0);
        while (clock <= stage_length) {
          pos = pos + kSteps[rng() & 3u];
          if (!inside(pos)) {
            alive = false;
            break;
          }
          clock += rng.exponential(1.0);
        }
        if (alive) next.push_back(pos);
      }
      estimate *= static_cast<double>(next.size()) / static_cast<double>(particles);
      cloud.swap(next);
    }
    return cloud.empty() ? 0.0 : estimate;
  });

  RunningStats stats;
  for (double v : per_run) stats.push(v);
  ProbEstimate out;
  out.mean = stats.mean();
  out.std_error = stats.std_error();
  out.replicas = static_cast<std::int64_t>(particles * annulus.runs);
  return out;
}

}  // namespace voterlab
