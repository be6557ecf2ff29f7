#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace voterlab {

// Advisory bits attached to an estimate; none of them invalidate the number.
enum EstimateFlag : std::uint32_t {
  kFlagNone = 0,
  kFlagOutsideValidityWindow = 1u << 0,  // parameters outside an asymptotic regime
  kFlagTorusTooSmall = 1u << 1,          // L < 8 sqrt(t)
  kFlagFewHits = 1u << 2,                // expected hit count below 10
  kFlagAbortedReplicas = 1u << 3,        // some replicas hit the jump budget
};

// Monte Carlo estimate of a probability.
struct ProbEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::int64_t replicas = 0;
  std::int64_t aborted = 0;
  std::uint32_t flags = kFlagNone;

  bool has_flag(EstimateFlag f) const noexcept { return (flags & f) != 0; }
};

// Welford accumulator.
class RunningStats {
 public:
  void push(double x) noexcept {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
  }

  void merge(const RunningStats& o) noexcept {
    if (o.n_ == 0) return;
    if (n_ == 0) {
      *this = o;
      return;
    }
    const auto n = n_ + o.n_;
    const double delta = o.mean_ - mean_;
    mean_ += delta * static_cast<double>(o.n_) / static_cast<double>(n);
    m2_ += o.m2_ + delta * delta * static_cast<double>(n_) * static_cast<double>(o.n_) /
                       static_cast<double>(n);
    n_ = n;
  }

  std::int64_t count() const noexcept { return n_; }
  double mean() const noexcept { return mean_; }
  double variance() const noexcept { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double std_error() const noexcept {
    return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0;
  }

 private:
  std::int64_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

struct MeanEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::int64_t n = 0;
};

inline constexpr std::size_t kDefaultBatches = 32;

// Batch-means estimate over values in replica order. Values are split into
// `batches` contiguous groups of near-equal size; the standard error is the
// spread of the group means. Falls back to the plain standard error when
// there are fewer values than batches.
inline MeanEstimate batch_means(std::span<const double> values,
                                std::size_t batches = kDefaultBatches) {
  const std::size_t n = values.size();
  if (n == 0) throw std::invalid_argument("batch_means: no values");
  MeanEstimate out;
  out.n = static_cast<std::int64_t>(n);
  double total = 0.0;
  for (double v : values) total += v;
  out.mean = total / static_cast<double>(n);
  if (n < 2) return out;
  if (n < 2 * batches) {
    RunningStats rs;
    for (double v : values) rs.push(v);
    out.std_error = rs.std_error();
    return out;
  }
  RunningStats batch_stats;
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t lo = b * n / batches;
    const std::size_t hi = (b + 1) * n / batches;
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += values[i];
    batch_stats.push(s / static_cast<double>(hi - lo));
  }
  out.std_error = std::sqrt(batch_stats.variance() / static_cast<double>(batches));
  return out;
}

// Mean of 0/1 outcomes with the binomial standard error.
inline ProbEstimate indicator_estimate(std::int64_t hits, std::int64_t replicas) {
  if (replicas <= 0) throw std::invalid_argument("indicator_estimate: replicas must be positive");
  ProbEstimate e;
  e.replicas = replicas;
  e.mean = static_cast<double>(hits) / static_cast<double>(replicas);
  e.std_error = std::sqrt(e.mean * (1.0 - e.mean) / static_cast<double>(replicas));
  return e;
}

inline double combined_stderr(double a, double b) noexcept { return std::sqrt(a * a + b * b); }

// |a - b| <= k * sqrt(sa^2 + sb^2)
inline bool agree_within(double a, double sa, double b, double sb, double k) noexcept {
  return std::abs(a - b) <= k * combined_stderr(sa, sb);
}

}  // namespace voterlab
