#pragma once

// Forward voter model on an L x L torus. Each site, at rate 1, copies the
// opinion of a uniformly chosen nearest neighbour; this is the Harris system
// with rate-1/4 clocks on ordered neighbour pairs, thinned to one clock per
// site.
//
// Events are generated block by block: a block of length d holds
// K ~ Poisson(L^2 d) events at uniform sites, in time order. Only events at
// the origin need actual times (everything else is order-only), and those are
// drawn sequentially as order statistics: given the previous timed event
// (index i, time a), event j falls at a + (b - a) * Beta(j - i, K - j + 1)
// where b is the block end. Every origin event is timed whether or not it
// changes the opinion, so the random stream consumed does not depend on the
// configuration. Two systems started from coupled initial marks and driven by
// the same stream therefore share one Harris system.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <random>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "voterlab/replica_farm.hpp"
#include "voterlab/rng.hpp"
#include "voterlab/statistics.hpp"

namespace voterlab {

struct TorusConfig {
  std::int32_t side = 32;
  double horizon = 16.0;
  double rho = 0.5;

  // Dual walks from the origin travel O(sqrt t); below 8 sqrt(t) they may wrap.
  bool large_enough() const noexcept { return side >= 8.0 * std::sqrt(horizon); }

  void validate() const {
    if (side < 4) throw std::invalid_argument("TorusConfig: side must be >= 4");
    if (!(horizon >= 0.0)) throw std::invalid_argument("TorusConfig: negative horizon");
    if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("TorusConfig: rho outside [0,1]");
  }
};

// Neighbour table of the torus; site (x, y) has index y * L + x and the
// origin is index 0.
class TorusGeometry {
 public:
  explicit TorusGeometry(std::int32_t side) : side_(side) {
    const auto n = static_cast<std::size_t>(side) * static_cast<std::size_t>(side);
    neighbours_.resize(n);
    for (std::int32_t y = 0; y < side; ++y) {
      for (std::int32_t x = 0; x < side; ++x) {
        auto idx = [&](std::int32_t a, std::int32_t b) {
          return static_cast<std::uint32_t>(((b + side) % side) * side + (a + side) % side);
        };
        neighbours_[idx(x, y)] = {idx(x + 1, y), idx(x - 1, y), idx(x, y + 1), idx(x, y - 1)};
      }
    }
  }

  std::int32_t side() const noexcept { return side_; }
  std::uint32_t sites() const noexcept { return static_cast<std::uint32_t>(neighbours_.size()); }
  std::uint32_t neighbour(std::uint32_t site, std::uint32_t dir) const noexcept {
    return neighbours_[site][dir];
  }

  static std::shared_ptr<const TorusGeometry> get(std::int32_t side) {
    static std::mutex mutex;
    static std::unordered_map<std::int32_t, std::shared_ptr<const TorusGeometry>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[side];
    if (!slot) slot = std::make_shared<const TorusGeometry>(side);
    return slot;
  }

 private:
  std::int32_t side_;
  std::vector<std::array<std::uint32_t, 4>> neighbours_;
};

inline constexpr std::uint32_t kTorusOrigin = 0;

struct ForwardState {
  std::shared_ptr<const TorusGeometry> geometry;
  std::vector<std::uint8_t> eta;
  double clock = 0.0;
  double origin_occupation = 0.0;  // integral of eta_s(0) over [0, clock]

  bool origin() const noexcept { return eta[kTorusOrigin] != 0; }
  std::size_t ones() const noexcept {
    std::size_t n = 0;
    for (auto v : eta) n += v;
    return n;
  }
};

// eta(x) = 1[U_x < rho] with one uniform per site in index order, so states
// built from the same stream at two densities are ordered site by site.
template <typename Rng>
ForwardState init_bernoulli(const TorusConfig& cfg, Rng& rng) {
  cfg.validate();
  ForwardState state;
  state.geometry = TorusGeometry::get(cfg.side);
  state.eta.resize(state.geometry->sites());
  for (auto& v : state.eta) v = rng.uniform() < cfg.rho ? 1 : 0;
  return state;
}

// Observation points passed to an evolve() observer.
enum class ForwardEvent { kOriginChange, kBlockEnd };

struct NoObserver {
  bool operator()(const ForwardState&, ForwardEvent) const noexcept { return false; }
};

namespace detail {
template <typename Rng>
double beta_variate(double a, double b, Rng& rng) {
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return x / (x + y);
}
}  // namespace detail

// Advances the state to `until`. The observer is called after every change of
// the origin's opinion and at every block end, with state.clock and
// state.origin_occupation current and all earlier events applied; returning
// true stops the evolution there. Returns true if stopped early.
template <typename Rng, typename Observer = NoObserver>
bool evolve_in_place(ForwardState& state, double until, Rng& rng, Observer&& observer = {},
                     double block_length = 1.0) {
  if (!(until >= state.clock)) throw std::invalid_argument("evolve: until < clock");
  const TorusGeometry& geo = *state.geometry;
  const std::uint32_t n_sites = geo.sites();
  auto& eta = state.eta;

  auto advance_clock = [&](double to) {
    if (eta[kTorusOrigin]) state.origin_occupation += to - state.clock;
    state.clock = to;
  };

  std::poisson_distribution<std::int64_t> full_block(static_cast<double>(n_sites) * block_length);
  while (state.clock < until) {
    const double start = state.clock;
    const double length = std::min(block_length, until - start);
    const double end = start + length;
    std::int64_t events;
    if (length == block_length) {
      events = full_block(rng);
    } else {
      std::poisson_distribution<std::int64_t> partial(static_cast<double>(n_sites) * length);
      events = partial(rng);
    }

    std::int64_t last_index = 0;
    double last_time = start;
    for (std::int64_t j = 1; j <= events; ++j) {
      const std::uint64_t r = rng();
      const auto site = static_cast<std::uint32_t>(((r >> 32) * n_sites) >> 32);
      const std::uint8_t incoming = eta[geo.neighbour(site, static_cast<std::uint32_t>(r & 3u))];
      if (site != kTorusOrigin) {
        eta[site] = incoming;
        continue;
      }
      const double when =
          last_time + (end - last_time) *
                          detail::beta_variate(static_cast<double>(j - last_index),
                                               static_cast<double>(events - j + 1), rng);
      last_index = j;
      last_time = when;
      if (incoming == eta[kTorusOrigin]) continue;
      advance_clock(when);
      eta[kTorusOrigin] = incoming;
      if (observer(std::as_const(state), ForwardEvent::kOriginChange)) return true;
    }
    advance_clock(end);
    if (observer(std::as_const(state), ForwardEvent::kBlockEnd)) return true;
  }
  return false;
}

template <typename Rng>
ForwardState evolve(ForwardState state, double until, Rng& rng) {
  evolve_in_place(state, until, rng);
  return state;
}

namespace detail {
inline std::uint32_t forward_flags(const TorusConfig& cfg) {
  return cfg.large_enough() ? kFlagNone : kFlagTorusTooSmall;
}
}  // namespace detail

// Does the origin hold opinion 1 throughout [0, t]? Stops at the first flip.
template <typename Rng>
bool forward_persists(const TorusConfig& cfg, Rng& rng) {
  auto state = init_bernoulli(cfg, rng);
  if (!state.origin()) return false;
  const bool stopped = evolve_in_place(state, cfg.horizon, rng,
                                       [](const ForwardState& s, ForwardEvent e) {
                                         return e == ForwardEvent::kOriginChange && !s.origin();
                                       });
  return !stopped;
}

// Is T_t >= level * t? Stops as soon as the answer is decided.
template <typename Rng>
bool forward_tail_event(const TorusConfig& cfg, double level_alpha, Rng& rng) {
  auto state = init_bernoulli(cfg, rng);
  const double t = cfg.horizon;
  // Block lengths are summed in floating point, so allow a rounding slack;
  // otherwise level 1 could miss an origin that never flipped.
  const double need = level_alpha * t - 1e-12 * std::max(1.0, t);
  const double zero_budget = t - level_alpha * t;
  bool reached = false;
  evolve_in_place(state, t, rng, [&](const ForwardState& s, ForwardEvent) {
    if (s.origin_occupation >= need) {
      reached = true;
      return true;
    }
    return s.clock - s.origin_occupation > zero_budget;
  });
  return reached || state.origin_occupation >= need;
}

// P(T_t = t) by direct simulation.
inline ProbEstimate forward_persistence_mc(const TorusConfig& cfg, std::int64_t replicas,
                                           const StreamSource& streams,
                                           const RunOptions& options = {}) {
  cfg.validate();
  if (replicas < 1) throw std::invalid_argument("forward_persistence_mc: replicas < 1");
  const auto outcomes = map_replicas<std::uint8_t>(
      static_cast<std::size_t>(replicas), options.workers, [&](std::size_t i) -> std::uint8_t {
        auto rng = streams.at(i);
        return forward_persists(cfg, rng) ? 1 : 0;
      });
  std::int64_t hits = 0;
  for (auto o : outcomes) hits += o;
  auto est = indicator_estimate(hits, replicas);
  est.flags |= detail::forward_flags(cfg);
  if (hits < 10) est.flags |= kFlagFewHits;
  return est;
}

// P(T_t >= level * t) by direct simulation.
inline ProbEstimate forward_tail_mc(const TorusConfig& cfg, double level_alpha,
                                    std::int64_t replicas, const StreamSource& streams,
                                    const RunOptions& options = {}) {
  cfg.validate();
  if (!(level_alpha > 0.0 && level_alpha <= 1.0))
    throw std::invalid_argument("forward_tail_mc: level_alpha must be in (0, 1]");
  if (replicas < 1) throw std::invalid_argument("forward_tail_mc: replicas < 1");
  const auto outcomes = map_replicas<std::uint8_t>(
      static_cast<std::size_t>(replicas), options.workers, [&](std::size_t i) -> std::uint8_t {
        auto rng = streams.at(i);
        return forward_tail_event(cfg, level_alpha, rng) ? 1 : 0;
      });
  std::int64_t hits = 0;
  for (auto o : outcomes) hits += o;
  auto est = indicator_estimate(hits, replicas);
  est.flags |= detail::forward_flags(cfg);
  if (hits < 10) est.flags |= kFlagFewHits;
  return est;
}

struct CovarianceEstimate {
  double covariance = 0.0;
  double std_error = 0.0;  // delta-method standard error
  std::int64_t replicas = 0;
};

// Empirical Cov(eta_s(0), eta_s2(0)) across replicas.
inline CovarianceEstimate forward_covariance_mc(const TorusConfig& cfg, double s, double s2,
                                                std::int64_t replicas, const StreamSource& streams,
                                                const RunOptions& options = {}) {
  cfg.validate();
  if (!(s >= 0.0 && s <= s2 && s2 <= cfg.horizon))
    throw std::invalid_argument("forward_covariance_mc: need 0 <= s <= s2 <= horizon");
  if (replicas < 2) throw std::invalid_argument("forward_covariance_mc: replicas < 2");
  struct Pair {
    std::uint8_t a = 0, b = 0;
  };
  const auto pairs = map_replicas<Pair>(
      static_cast<std::size_t>(replicas), options.workers, [&](std::size_t i) {
        auto rng = streams.at(i);
        auto state = init_bernoulli(cfg, rng);
        evolve_in_place(state, s, rng);
        Pair p;
        p.a = state.origin();
        evolve_in_place(state, s2, rng);
        p.b = state.origin();
        return p;
      });
  const auto n = static_cast<double>(replicas);
  double sa = 0, sb = 0, sab = 0;
  for (const auto& p : pairs) {
    sa += p.a;
    sb += p.b;
    sab += p.a * p.b;
  }
  const double ma = sa / n, mb = sb / n, mab = sab / n;
  CovarianceEstimate out;
  out.replicas = replicas;
  out.covariance = (mab - ma * mb) * n / (n - 1.0);
  // Influence function of the covariance: (a - ma)(b - mb) - cov.
  RunningStats infl;
  for (const auto& p : pairs) infl.push((p.a - ma) * (p.b - mb));
  out.std_error = infl.std_error();
  return out;
}

}  // namespace voterlab
