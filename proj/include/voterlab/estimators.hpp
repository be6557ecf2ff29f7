#pragma once

// Duality-based estimators of occupation-time probabilities.
//
// Given a dual sample with lineage masses M_1..M_n (summing to t), the
// occupation time is T_t = sum_k M_k B_k with B_k i.i.d. Bernoulli(rho):
// distinct lineages sit on distinct sites of a product initial measure.
// Hence P(T_t = t) = E[rho^n] and P(T_t >= a t) = E[P(sum M_k B_k >= a t | M)].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "voterlab/dual_coalescer.hpp"
#include "voterlab/replica_farm.hpp"
#include "voterlab/statistics.hpp"

namespace voterlab {

struct PersistenceEstimate {
  double t = 0.0;
  double rho = 0.0;
  double mean = 0.0;
  double std_error = 0.0;
  std::int64_t replicas = 0;
  std::int64_t aborted = 0;
  std::size_t max_lineages = 0;  // largest lineage count among samples (0 for SMC)
};

struct TailEstimate {
  double t = 0.0;
  double rho = 0.0;
  double level_alpha = 0.0;
  double prob = 0.0;
  double std_error = 0.0;
  std::int64_t replicas = 0;
  std::int64_t marks_per_replica = 0;
  std::int64_t aborted = 0;
  double exact_fraction = 0.0;  // share of samples whose inner probability was enumerated
};

// Largest lineage count for which the inner tail probability is enumerated.
inline constexpr std::size_t kExactEnumerationLimit = 25;

namespace detail {

// All subset sums of `masses` with their Bernoulli(rho) product weights,
// sorted by sum, plus suffix sums of the weights.
struct SubsetTable {
  std::vector<double> sums;
  std::vector<double> suffix_weight;  // size sums.size() + 1
};

inline std::vector<std::pair<double, double>> subset_sums(std::span<const double> masses, double rho) {
  std::vector<std::pair<double, double>> out{{0.0, 1.0}};
  out.reserve(std::size_t{1} << masses.size());
  for (double m : masses) {
    const std::size_t k = out.size();
    for (std::size_t i = 0; i < k; ++i) {
      out.push_back({out[i].first + m, out[i].second * rho});
      out[i].second *= 1.0 - rho;
    }
  }
  return out;
}

inline SubsetTable subset_table(std::span<const double> masses, double rho) {
  auto pairs = subset_sums(masses, rho);
  std::sort(pairs.begin(), pairs.end());
  SubsetTable table;
  table.sums.resize(pairs.size());
  table.suffix_weight.assign(pairs.size() + 1, 0.0);
  for (std::size_t i = 0; i < pairs.size(); ++i) table.sums[i] = pairs[i].first;
  for (std::size_t i = pairs.size(); i-- > 0;)
    table.suffix_weight[i] = table.suffix_weight[i + 1] + pairs[i].second;
  return table;
}

inline double threshold_slack(double threshold) { return 1e-12 * std::max(1.0, std::abs(threshold)); }

}  // namespace detail

// P(sum_k M_k B_k >= threshold) for independent Bernoulli(rho) marks, by
// meet-in-the-middle subset enumeration. Exact up to rounding; intended for
// at most kExactEnumerationLimit masses but correct for any count.
inline std::vector<double> exact_tail_probabilities(std::span<const double> masses, double rho,
                                                    std::span<const double> thresholds) {
  const std::size_t half = masses.size() / 2;
  const auto left = detail::subset_sums(masses.first(half), rho);
  const auto right = detail::subset_table(masses.subspan(half), rho);
  std::vector<double> out;
  out.reserve(thresholds.size());
  for (double threshold : thresholds) {
    const double slack = detail::threshold_slack(threshold);
    double p = 0.0;
    for (const auto& [sum, weight] : left) {
      const auto it = std::lower_bound(right.sums.begin(), right.sums.end(), threshold - sum - slack);
      p += weight * right.suffix_weight[static_cast<std::size_t>(it - right.sums.begin())];
    }
    out.push_back(std::clamp(p, 0.0, 1.0));
  }
  return out;
}

inline double exact_tail_probability(std::span<const double> masses, double rho, double threshold) {
  return exact_tail_probabilities(masses, rho, std::span<const double>(&threshold, 1)).front();
}

// Mark-resampling estimate of the same probabilities: `marks` independent
// mark vectors, shared across all thresholds. Mark k of a draw is
// 1[U_k < rho], so draws at two densities from one stream are coupled.
template <typename Rng>
std::vector<double> resampled_tail_probabilities(std::span<const double> masses, double rho,
                                                 std::span<const double> thresholds,
                                                 std::int64_t marks, Rng& rng) {
  if (marks < 1) throw std::invalid_argument("resampled_tail_probabilities: marks < 1");
  std::vector<std::int64_t> hits(thresholds.size(), 0);
  for (std::int64_t d = 0; d < marks; ++d) {
    double total = 0.0;
    for (double m : masses)
      if (rng.uniform() < rho) total += m;
    for (std::size_t j = 0; j < thresholds.size(); ++j)
      if (total >= thresholds[j] - detail::threshold_slack(thresholds[j])) ++hits[j];
  }
  std::vector<double> out(thresholds.size());
  for (std::size_t j = 0; j < thresholds.size(); ++j)
    out[j] = static_cast<double>(hits[j]) / static_cast<double>(marks);
  return out;
}

// Inner conditional tail probabilities for one sample: exact below the
// enumeration limit, resampled above it.
template <typename Rng>
std::vector<double> inner_tail_probabilities(const DualSample& sample, double rho,
                                             std::span<const double> levels, std::int64_t marks,
                                             Rng& rng) {
  std::vector<double> thresholds;
  thresholds.reserve(levels.size());
  for (double a : levels) thresholds.push_back(a * sample.horizon);
  if (sample.n_lineages() <= kExactEnumerationLimit)
    return exact_tail_probabilities(sample.lineage_masses, rho, thresholds);
  return resampled_tail_probabilities(sample.lineage_masses, rho, thresholds, marks, rng);
}

// Runs `replicas` independent dual samples at horizon t and maps each through
// summarize(sample, rng), where rng continues the sample's own stream.
// Aborted samples (jump budget) yield nullopt.
template <typename R, typename Summarize>
std::vector<std::optional<R>> map_dual_samples(double t, std::int64_t replicas,
                                               const StreamSource& streams,
                                               const RunOptions& options, Summarize&& summarize) {
  if (replicas < 1) throw std::invalid_argument("map_dual_samples: replicas < 1");
  DualOptions dual_options;
  dual_options.jump_budget = options.jump_budget;
  return map_replicas<std::optional<R>>(
      static_cast<std::size_t>(replicas), options.workers,
      [&](std::size_t i) -> std::optional<R> {
        thread_local DualCoalescer coalescer;
        auto rng = streams.at(i);
        const DualSample sample = coalescer.simulate(t, rng, dual_options);
        if (sample.aborted) return std::nullopt;
        return summarize(sample, rng);
      });
}

namespace detail {
template <typename R>
std::int64_t count_aborted(const std::vector<std::optional<R>>& v) {
  std::int64_t n = 0;
  for (const auto& x : v) n += x.has_value() ? 0 : 1;
  return n;
}
}  // namespace detail

// P(T_t = t) = E[rho^(#lineages)], averaged over independent dual samples.
inline PersistenceEstimate persistence_dual(double t, double rho, std::int64_t replicas,
                                            const StreamSource& streams,
                                            const RunOptions& options = {}) {
  if (replicas < 2) throw std::invalid_argument("persistence_dual: replicas < 2");
  if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("persistence_dual: rho must be in (0,1)");
  const auto counts = map_dual_samples<std::size_t>(
      t, replicas, streams, options, [](const DualSample& s, auto&) { return s.n_lineages(); });
  std::vector<double> values;
  values.reserve(counts.size());
  PersistenceEstimate out{t, rho};
  for (const auto& c : counts) {
    if (!c) continue;
    values.push_back(std::pow(rho, static_cast<double>(*c)));
    out.max_lineages = std::max(out.max_lineages, *c);
  }
  out.aborted = detail::count_aborted(counts);
  out.replicas = static_cast<std::int64_t>(values.size());
  if (values.empty()) return out;
  const auto bm = batch_means(values);
  out.mean = bm.mean;
  out.std_error = bm.std_error;
  return out;
}

struct SmcOptions {
  std::size_t runs = kDefaultBatches;  // independent SMC runs (the batches)
  std::size_t particles = 512;         // particles per run
  std::size_t stages = 0;              // checkpoints per half of [0, t]; 0: chosen from t
  // Twist exponent gamma(u) = twist_linear * u + twist_quadratic * u^2 at
  // u = beta / t; see persistence_dual_smc.
  double twist_linear = 0.35;
  double twist_quadratic = 0.15;
};

// Checkpoints 0 < b_1 < ... < b_K = t: geometric in beta from 1/2 up to t/2,
// then geometric in t - beta from t/2 down to t - 1. Both ends of the
// reversed-time axis carry information at every scale: early walkers spread
// at scale sqrt(beta), late-born walkers have only t - beta left to merge.
inline std::vector<double> smc_checkpoints(double t, std::size_t stages) {
  if (!(t > 0.0)) throw std::invalid_argument("smc_checkpoints: t must be positive");
  if (t <= 4.0) return {t};
  if (stages == 0) stages = std::max<std::size_t>(4, static_cast<std::size_t>(std::ceil(4.0 * std::log10(t))));
  const double half = t / 2.0;
  std::vector<double> points;
  const double up = std::pow(half / 0.5, 1.0 / static_cast<double>(stages - 1));
  for (std::size_t k = 0; k + 1 < stages; ++k) points.push_back(0.5 * std::pow(up, static_cast<double>(k)));
  points.push_back(half);
  const double down = std::pow(half, 1.0 / static_cast<double>(stages));
  for (std::size_t j = 1; j <= stages; ++j) points.push_back(t - half / std::pow(down, static_cast<double>(j)));
  points.push_back(t);
  return points;
}

// P(T_t = t) by twisted sequential Monte Carlo over reversed time.
//
// Let N_b be the number of live walkers at reversed time b, so the target is
// E[rho^(N_t)]. Each run carries a cloud of fronts through the checkpoints;
// at checkpoint k the intermediate target is proportional to
// rho^(gamma_k N_{b_k}), with gamma_0 = gamma_K = 1, so the incremental
// weight is rho^(gamma_k N_k - gamma_{k-1} N_{k-1}) and the product telescopes
// to rho^(N_t - 1). The product of the stage mean weights times rho is an
// unbiased estimate for any choice of gamma; gamma only moves the variance.
//
// gamma < 1 because walkers alive at intermediate times mostly merge before
// t: regressing log E[rho^(N_t - N_b) | state] on N_b from pilot runs gives
// a slope close to log(1/rho) for b/t below 1/2, falling off towards the end,
// so weighting by the full rho^(N_b) would select on noise. The default
// gamma(u) = 0.35 u + 0.15 u^2 follows that regression; resampling is
// systematic. Standard error from the spread across independent runs.
inline PersistenceEstimate persistence_dual_smc(double t, double rho, const StreamSource& streams,
                                                const RunOptions& options = {},
                                                const SmcOptions& smc = {}) {
  if (!(t > 0.0)) throw std::invalid_argument("persistence_dual_smc: t must be positive");
  if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("persistence_dual_smc: rho must be in (0,1)");
  if (smc.runs < 2 || smc.particles < 1) throw std::invalid_argument("persistence_dual_smc: bad sizes");
  const auto checkpoints = smc_checkpoints(t, smc.stages);
  auto gamma = [&](double b) {
    if (b >= t) return 1.0;
    const double u = b / t;
    return smc.twist_linear * u + smc.twist_quadratic * u * u;
  };

  const auto estimates = map_replicas<double>(smc.runs, options.workers, [&](std::size_t run) {
    thread_local FrontAdvancer advancer;
    auto rng = streams.at(run);
    std::vector<DualFront> cloud(smc.particles);
    std::vector<DualFront> next(smc.particles);
    std::vector<double> weights(smc.particles);
    const double log_rho = std::log(rho);
    double log_estimate = log_rho;
    double previous = 0.0;
    double previous_gamma = 1.0;
    for (double checkpoint : checkpoints) {
      const double g = gamma(checkpoint);
      double total = 0.0;
      for (std::size_t i = 0; i < smc.particles; ++i) {
        const auto before = static_cast<double>(cloud[i].n_lineages());
        advancer.advance(cloud[i], previous, checkpoint, rng);
        const auto after = static_cast<double>(cloud[i].n_lineages());
        weights[i] = std::exp(log_rho * (g * after - previous_gamma * before));
        total += weights[i];
      }
      log_estimate += std::log(total / static_cast<double>(smc.particles));
      previous = checkpoint;
      previous_gamma = g;
      if (checkpoint == checkpoints.back()) break;
      // Systematic resampling.
      const double step = total / static_cast<double>(smc.particles);
      double u = rng.uniform() * step;
      double cumulative = 0.0;
      std::size_t src = 0;
      for (std::size_t i = 0; i < smc.particles; ++i, u += step) {
        while (src + 1 < smc.particles && cumulative + weights[src] <= u) cumulative += weights[src++];
        next[i] = cloud[src];
      }
      cloud.swap(next);
    }
    return std::exp(log_estimate);
  });

  PersistenceEstimate out{t, rho};
  const auto bm = batch_means(estimates, estimates.size());
  out.mean = bm.mean;
  out.std_error = bm.std_error;
  out.replicas = static_cast<std::int64_t>(smc.runs * smc.particles);
  return out;
}

// P(T_t >= a t) for each level a, on one shared set of dual samples with
// marks shared across levels.
inline std::vector<TailEstimate> tail_dual_levels(double t, double rho, std::span<const double> levels,
                                                  std::int64_t replicas, std::int64_t marks_per_replica,
                                                  const StreamSource& streams,
                                                  const RunOptions& options = {}) {
  if (replicas < 2) throw std::invalid_argument("tail_dual: replicas < 2");
  if (marks_per_replica < 1) throw std::invalid_argument("tail_dual: marks_per_replica < 1");
  for (double a : levels) {
    if (!(a > rho)) throw std::invalid_argument("tail_dual: level_alpha <= rho (law of large numbers regime)");
    if (!(a < 1.0)) throw std::invalid_argument("tail_dual: level_alpha >= 1 (use persistence)");
  }
  struct Inner {
    std::vector<double> probs;
    bool exact = false;
  };
  const std::vector<double> level_copy(levels.begin(), levels.end());
  const auto inner = map_dual_samples<Inner>(t, replicas, streams, options,
                                             [&](const DualSample& s, auto& rng) {
                                               return Inner{inner_tail_probabilities(s, rho, level_copy,
                                                                                     marks_per_replica, rng),
                                                            s.n_lineages() <= kExactEnumerationLimit};
                                             });
  std::vector<TailEstimate> out;
  const auto aborted = detail::count_aborted(inner);
  for (std::size_t j = 0; j < levels.size(); ++j) {
    std::vector<double> values;
    std::int64_t exact = 0;
    for (const auto& x : inner) {
      if (!x) continue;
      values.push_back(x->probs[j]);
      exact += x->exact ? 1 : 0;
    }
    TailEstimate e;
    e.t = t;
    e.rho = rho;
    e.level_alpha = levels[j];
    e.replicas = static_cast<std::int64_t>(values.size());
    e.marks_per_replica = marks_per_replica;
    e.aborted = aborted;
    if (!values.empty()) {
      const auto bm = batch_means(values);
      e.prob = bm.mean;
      e.std_error = bm.std_error;
      e.exact_fraction = static_cast<double>(exact) / static_cast<double>(values.size());
    }
    out.push_back(e);
  }
  return out;
}

inline TailEstimate tail_dual(double t, double rho, double level_alpha, std::int64_t replicas,
                              std::int64_t marks_per_replica, const StreamSource& streams,
                              const RunOptions& options = {}) {
  return tail_dual_levels(t, rho, std::span<const double>(&level_alpha, 1), replicas,
                          marks_per_replica, streams, options)
      .front();
}

// Mean number of distinct dual sites chi_u^u over u in [lo * t, hi * t].
inline MeanEstimate mean_window_count(double t, std::int64_t replicas, const StreamSource& streams,
                                      const RunOptions& options = {}, double lo_fraction = 0.5,
                                      double hi_fraction = 1.0) {
  if (replicas < 2) throw std::invalid_argument("mean_window_count: replicas < 2");
  const auto counts = map_dual_samples<double>(
      t, replicas, streams, options, [&](const DualSample& s, auto&) {
        return static_cast<double>(count_window(s, lo_fraction * t, hi_fraction * t));
      });
  std::vector<double> values;
  for (const auto& c : counts)
    if (c) values.push_back(*c);
  if (values.empty()) return {};
  return batch_means(values);
}

struct VarianceIdentityReport {
  double lhs = 0.0;  // empirical Var(T_t / t)
  double lhs_std_error = 0.0;
  double rhs = 0.0;  // rho (1 - rho) E[sum M_k^2] / t^2
  double rhs_std_error = 0.0;
  double combined_std_error = 0.0;
  std::int64_t replicas = 0;
  bool pass = false;  // |lhs - rhs| <= 4 combined standard errors
};

// Var(T_t/t) = E[Var(T_t/t | M)] + Var(E[T_t/t | M])
//            = rho (1 - rho) E[sum M_k^2] / t^2 + Var(rho)
// with the second term zero because sum M_k = t on every sample.
inline VarianceIdentityReport variance_identity_check(double t, double rho, std::int64_t replicas,
                                                      const StreamSource& streams,
                                                      const RunOptions& options = {}) {
  if (replicas < 100) throw std::invalid_argument("variance_identity_check: replicas < 100");
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("variance_identity_check: rho outside [0,1]");
  struct Draw {
    double occupation = 0.0;   // T_t / t
    double square_mass = 0.0;  // sum M_k^2 / t^2
  };
  const auto draws = map_dual_samples<Draw>(t, replicas, streams, options, [&](const DualSample& s, auto& rng) {
    return Draw{occupation_sample(s, rho, rng) / t, s.sum_squared_masses() / (t * t)};
  });
  RunningStats occ, sq;
  std::vector<double> ys;
  for (const auto& d : draws) {
    if (!d) continue;
    occ.push(d->occupation);
    sq.push(d->square_mass);
    ys.push_back(d->occupation);
  }
  VarianceIdentityReport r;
  r.replicas = occ.count();
  if (r.replicas < 2) return r;
  const auto n = static_cast<double>(r.replicas);
  r.lhs = occ.variance();
  double m4 = 0.0;
  for (double y : ys) m4 += std::pow(y - occ.mean(), 4);
  m4 /= n;
  const double s2 = r.lhs * (n - 1.0) / n;
  r.lhs_std_error = std::sqrt(std::max(0.0, m4 - s2 * s2) / n);
  const double factor = rho * (1.0 - rho);
  r.rhs = factor * sq.mean();
  r.rhs_std_error = factor * sq.std_error();
  r.combined_std_error = combined_stderr(r.lhs_std_error, r.rhs_std_error);
  r.pass = std::abs(r.lhs - r.rhs) <= 4.0 * r.combined_std_error + 1e-15;
  return r;
}

// P(M(t) >= x) for the mean magnetization M(t) = 2 T_t / t - 1 of the
// symmetric (rho = 1/2) system. x = 1 is the persistence probability.
inline TailEstimate magnetization_tail(double t, double x, std::int64_t replicas,
                                       std::int64_t marks_per_replica, const StreamSource& streams,
                                       const RunOptions& options = {}) {
  if (!(x > 0.0 && x <= 1.0)) throw std::invalid_argument("magnetization_tail: x must be in (0, 1]");
  if (x == 1.0) {
    const auto p = persistence_dual(t, 0.5, replicas, streams, options);
    TailEstimate e;
    e.t = t;
    e.rho = 0.5;
    e.level_alpha = 1.0;
    e.prob = p.mean;
    e.std_error = p.std_error;
    e.replicas = p.replicas;
    e.aborted = p.aborted;
    e.exact_fraction = 1.0;
    return e;
  }
  return tail_dual(t, 0.5, (1.0 + x) / 2.0, replicas, marks_per_replica, streams, options);
}

}  // namespace voterlab
