#pragma once

// Coalescing dual walks of the origin, realized through origin injection.
//
// Every dual walk started at the origin at reversed time beta = t - s is
// evaluated at beta = t. Walks injected while some walker sits at the origin
// coincide with it, so distinct walkers are born only when the current origin
// resident makes its first jump. The simulator keeps one "newest" walker at
// the origin; when it leaves at beta, its birth interval closes and a
// successor is born there. Walkers jump at rate 1 to a uniform neighbour and
// a walker that lands on an occupied site joins that walker's lineage and
// stops. At beta = t the surviving walkers sit on pairwise distinct sites;
// each lineage's mass is the total length of the birth intervals it absorbed.
// docs/dual_reformulation.md has the derivation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "voterlab/rng.hpp"
#include "voterlab/site.hpp"
#include "voterlab/union_find.hpp"

namespace voterlab {

struct BirthInterval {
  double begin = 0.0;  // reversed time of birth
  double end = 0.0;    // reversed time of first departure (or the horizon)
  std::uint32_t lineage = 0;  // index into DualSample::lineage_masses
};

struct DualSample {
  double horizon = 0.0;
  std::vector<double> lineage_masses;
  std::vector<Site> lineage_sites;  // final positions, parallel to lineage_masses
  std::vector<BirthInterval> birth_intervals;  // sorted by begin, tiling [0, horizon]
  std::uint64_t jumps = 0;
  bool aborted = false;

  std::size_t n_lineages() const noexcept { return lineage_masses.size(); }

  double total_mass() const noexcept {
    double s = 0.0;
    for (double m : lineage_masses) s += m;
    return s;
  }

  double sum_squared_masses() const noexcept {
    double s = 0.0;
    for (double m : lineage_masses) s += m * m;
    return s;
  }
};

// Event log, for debugging. Serialized as packed little-endian records; see
// docs/trace_format.md.
enum class TraceKind : std::uint8_t { kBirth = 0, kMove = 1, kMerge = 2, kEnd = 3 };

struct TraceRecord {
  double beta = 0.0;
  std::uint32_t walker = 0;
  TraceKind kind = TraceKind::kMove;
  Site site{};
  std::uint32_t other = 0;  // merge target walker, otherwise 0
};

inline constexpr std::size_t kTraceRecordBytes = 8 + 4 + 1 + 4 + 4 + 4;
inline constexpr char kTraceMagic[8] = {'V', 'L', 'T', 'R', 'A', 'C', 'E', '1'};

namespace detail {
template <typename T>
void put_le(std::ostream& os, T value) {
  unsigned char bytes[sizeof(T)];
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    static_assert(sizeof(double) == 8);
    std::memcpy(&bits, &value, 8);
  } else {
    bits = static_cast<std::uint64_t>(static_cast<std::make_unsigned_t<T>>(value));
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}
}  // namespace detail

inline void write_trace(std::ostream& os, std::span<const TraceRecord> records) {
  os.write(kTraceMagic, sizeof(kTraceMagic));
  detail::put_le<std::uint64_t>(os, records.size());
  for (const auto& r : records) {
    detail::put_le<double>(os, r.beta);
    detail::put_le<std::uint32_t>(os, r.walker);
    detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(r.kind));
    detail::put_le<std::int32_t>(os, r.site.x);
    detail::put_le<std::int32_t>(os, r.site.y);
    detail::put_le<std::uint32_t>(os, r.other);
  }
}

// Site -> walker map. Dense square around the origin with a hash-map spill
// for the rare walker that wanders past it. Only live walkers are stored and
// callers erase them when done, so the dense part is reusable across samples.
class OccupancyMap {
 public:
  static constexpr std::uint32_t kEmpty = std::numeric_limits<std::uint32_t>::max();

  // Sizes the dense square for horizon t (half-width ~6 sqrt(t)). Must be
  // called while the map is empty.
  void prepare(double horizon) {
    const double reach = 6.0 * std::sqrt(horizon) + 8.0;
    const auto half = static_cast<std::int32_t>(std::min(reach, 2048.0));
    if (half > half_width_) {
      half_width_ = half;
      side_ = 2 * half + 1;
      cells_.assign(static_cast<std::size_t>(side_) * static_cast<std::size_t>(side_), kEmpty);
    }
    spill_.clear();
  }

  std::uint32_t get(Site s) const {
    if (inside(s)) return cells_[index(s)];
    const auto it = spill_.find(s);
    return it == spill_.end() ? kEmpty : it->second;
  }

  void set(Site s, std::uint32_t id) {
    if (inside(s))
      cells_[index(s)] = id;
    else
      spill_[s] = id;
  }

  void erase(Site s) {
    if (inside(s))
      cells_[index(s)] = kEmpty;
    else
      spill_.erase(s);
  }

 private:
  bool inside(Site s) const noexcept {
    return s.x >= -half_width_ && s.x <= half_width_ && s.y >= -half_width_ &&
           s.y <= half_width_;
  }
  std::size_t index(Site s) const noexcept {
    return static_cast<std::size_t>(s.y + half_width_) * static_cast<std::size_t>(side_) +
           static_cast<std::size_t>(s.x + half_width_);
  }

  std::int32_t half_width_ = -1;
  std::int32_t side_ = 0;
  std::vector<std::uint32_t> cells_;
  std::unordered_map<Site, std::uint32_t, SiteHash> spill_;
};

struct DualOptions {
  std::uint64_t jump_budget = 0;  // 0 means unlimited
  std::vector<TraceRecord>* trace = nullptr;
};

// Reusable simulator. Holding one per worker avoids reallocating the
// occupancy grid for every sample.
class DualCoalescer {
 public:
  template <typename Rng>
  DualSample simulate(double horizon, Rng& rng, const DualOptions& options = {}) {
    if (!(horizon > 0.0)) throw std::invalid_argument("simulate_dual: horizon must be positive");

    reset(horizon);
    auto* trace = options.trace;
    DualSample sample;
    sample.horizon = horizon;

    double beta = 0.0;
    std::uint32_t newest = spawn(beta, trace);

    for (;;) {
      const auto n = static_cast<std::uint32_t>(active_.size());
      const double next = beta + rng.exponential(static_cast<double>(n));
      if (next >= horizon) break;
      if (options.jump_budget != 0 && sample.jumps >= options.jump_budget) {
        sample.aborted = true;
        break;
      }
      beta = next;

      const std::uint64_t r = rng();
      const std::uint32_t slot =
          static_cast<std::uint32_t>(((r >> 32) * static_cast<std::uint64_t>(n)) >> 32);
      const std::uint32_t w = active_[slot];
      const Site from = position_[w];
      const Site to = from + kSteps[r & 3u];
      ++sample.jumps;

      occupancy_.erase(from);
      const std::uint32_t occupant = occupancy_.get(to);
      if (occupant != OccupancyMap::kEmpty) {
        lineages_.unite(w, occupant);
        deactivate(slot);
        if (trace) trace->push_back({beta, w, TraceKind::kMerge, to, occupant});
      } else {
        occupancy_.set(to, w);
        position_[w] = to;
        if (trace) trace->push_back({beta, w, TraceKind::kMove, to, 0});
      }

      if (w == newest) {
        departure_[w] = beta;
        newest = spawn(beta, trace);
      }
    }

    if (!sample.aborted) {
      departure_[newest] = horizon;
      finish(sample, trace);
    }
    for (const auto w : active_) occupancy_.erase(position_[w]);
    return sample;
  }

 private:
  void reset(double horizon) {
    occupancy_.prepare(horizon);
    position_.clear();
    birth_.clear();
    departure_.clear();
    active_.clear();
    slot_of_.clear();
    lineages_.clear();
  }

  std::uint32_t spawn(double beta, std::vector<TraceRecord>* trace) {
    const auto id = lineages_.add();
    position_.push_back(kOrigin);
    birth_.push_back(beta);
    departure_.push_back(beta);
    slot_of_.push_back(static_cast<std::uint32_t>(active_.size()));
    active_.push_back(id);
    occupancy_.set(kOrigin, id);
    if (trace) trace->push_back({beta, id, TraceKind::kBirth, kOrigin, 0});
    return id;
  }

  void deactivate(std::uint32_t slot) {
    const std::uint32_t last = active_.back();
    active_[slot] = last;
    slot_of_[last] = slot;
    active_.pop_back();
  }

  void finish(DualSample& sample, std::vector<TraceRecord>* trace) {
    // Lineages are numbered by their surviving walker, in walker-id order.
    std::vector<std::uint32_t> survivors(active_.begin(), active_.end());
    std::sort(survivors.begin(), survivors.end());
    std::unordered_map<std::uint32_t, std::uint32_t> lineage_of_root;
    lineage_of_root.reserve(survivors.size() * 2);
    sample.lineage_masses.assign(survivors.size(), 0.0);
    sample.lineage_sites.resize(survivors.size());
    for (std::uint32_t k = 0; k < survivors.size(); ++k) {
      const auto w = survivors[k];
      lineage_of_root.emplace(lineages_.find(w), k);
      sample.lineage_sites[k] = position_[w];
      if (trace) trace->push_back({sample.horizon, w, TraceKind::kEnd, position_[w], k});
    }

    const auto walkers = static_cast<std::uint32_t>(position_.size());
    sample.birth_intervals.resize(walkers);
    for (std::uint32_t w = 0; w < walkers; ++w) {
      const auto k = lineage_of_root.at(lineages_.find(w));
      sample.birth_intervals[w] = {birth_[w], departure_[w], k};
      sample.lineage_masses[k] += departure_[w] - birth_[w];
    }
  }

  OccupancyMap occupancy_;
  UnionFind lineages_;
  std::vector<Site> position_;
  std::vector<double> birth_;
  std::vector<double> departure_;
  std::vector<std::uint32_t> active_;
  std::vector<std::uint32_t> slot_of_;
};

// Reduced state of the dual system: positions of the live walkers only. The
// walker at the origin is always the newest one, so this is enough to
// continue the dynamics and to read off the lineage count, which is all the
// persistence estimator needs. Used to restart the system from checkpoints.
struct DualFront {
  std::vector<Site> walkers{kOrigin};

  std::size_t n_lineages() const noexcept { return walkers.size(); }
};

// Advances a front from reversed time `from` to `to`. Consumes the stream in
// the same order as DualCoalescer::simulate, so a single call from 0 to t
// reproduces simulate(t)'s lineage count exactly.
class FrontAdvancer {
 public:
  template <typename Rng>
  void advance(DualFront& front, double from, double to, Rng& rng) {
    if (!(to >= from)) throw std::invalid_argument("FrontAdvancer: to < from");
    occupancy_.prepare(std::max(to, 16.0));
    auto& walkers = front.walkers;
    for (std::uint32_t k = 0; k < walkers.size(); ++k) occupancy_.set(walkers[k], k);

    double beta = from;
    for (;;) {
      const auto n = static_cast<std::uint32_t>(walkers.size());
      const double next = beta + rng.exponential(static_cast<double>(n));
      if (next >= to) break;
      beta = next;
      const std::uint64_t r = rng();
      const std::uint32_t slot =
          static_cast<std::uint32_t>(((r >> 32) * static_cast<std::uint64_t>(n)) >> 32);
      const Site source = walkers[slot];
      const Site dest = source + kSteps[r & 3u];
      occupancy_.erase(source);
      if (occupancy_.get(dest) != OccupancyMap::kEmpty) {
        const std::uint32_t last = n - 1;
        if (slot != last) {
          walkers[slot] = walkers[last];
          occupancy_.set(walkers[slot], slot);
        }
        walkers.pop_back();
      } else {
        walkers[slot] = dest;
        occupancy_.set(dest, slot);
      }
      if (source.is_origin()) {
        occupancy_.set(kOrigin, static_cast<std::uint32_t>(walkers.size()));
        walkers.push_back(kOrigin);
      }
    }
    for (const auto& w : walkers) occupancy_.erase(w);
  }

 private:
  OccupancyMap occupancy_;
};

template <typename Rng>
DualSample simulate_dual(double horizon, Rng& rng, const DualOptions& options = {}) {
  DualCoalescer coalescer;
  return coalescer.simulate(horizon, rng, options);
}

// Number of distinct lineages among the dual points chi_u^u, r <= u <= s,
// i.e. walkers whose birth interval meets the reversed-time window
// [t - s, t - r].
inline std::size_t count_window(const DualSample& sample, double r, double s) {
  const double t = sample.horizon;
  if (!(r >= 0.0 && r <= s && s <= t))
    throw std::invalid_argument("count_window: need 0 <= r <= s <= horizon");
  if (sample.aborted) throw std::invalid_argument("count_window: aborted sample");
  const double lo = t - s;
  const double hi = t - r;
  const auto& iv = sample.birth_intervals;
  // First interval whose end exceeds lo (the last interval always qualifies).
  auto first = std::upper_bound(iv.begin(), iv.end(), lo,
                                [](double v, const BirthInterval& b) { return v < b.end; });
  if (first == iv.end()) first = iv.end() - 1;
  std::vector<bool> seen(sample.n_lineages(), false);
  std::size_t count = 0;
  for (auto it = first; it != iv.end() && it->begin <= hi; ++it) {
    if (!seen[it->lineage]) {
      seen[it->lineage] = true;
      ++count;
    }
  }
  return count;
}

// Lineage of the dual point chi_u^u, 0 <= u <= t: the walker whose birth
// interval contains reversed time t - u.
inline std::uint32_t lineage_of_point(const DualSample& sample, double u) {
  const double t = sample.horizon;
  if (!(u >= 0.0 && u <= t)) throw std::invalid_argument("lineage_of_point: need 0 <= u <= horizon");
  if (sample.aborted) throw std::invalid_argument("lineage_of_point: aborted sample");
  const double beta = t - u;
  const auto& iv = sample.birth_intervals;
  auto it = std::upper_bound(iv.begin(), iv.end(), beta,
                             [](double v, const BirthInterval& b) { return v < b.end; });
  if (it == iv.end()) --it;
  return it->lineage;
}

// One draw of the occupation time given the lineage masses: each lineage
// carries an independent Bernoulli(rho) initial opinion.
template <typename Rng>
double occupation_sample(const DualSample& sample, double rho, Rng& rng) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("occupation_sample: rho outside [0,1]");
  double total = 0.0;
  for (double m : sample.lineage_masses)
    if (rng.uniform() < rho) total += m;
  return total;
}

}  // namespace voterlab
