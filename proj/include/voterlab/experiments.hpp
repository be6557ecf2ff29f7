#pragma once

// Config-driven experiments: one JSON config in, one results file plus one
// manifest out. Everything numeric in the results file is a function of
// (config minus workers/output, seed, build) only.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "voterlab/dual_coalescer.hpp"
#include "voterlab/estimators.hpp"
#include "voterlab/forward_voter.hpp"
#include "voterlab/lattice_walks.hpp"
#include "voterlab/replica_farm.hpp"
#include "voterlab/results_io.hpp"
#include "voterlab/scaling_fit.hpp"

namespace voterlab {

enum class ExperimentKind { kPersistence, kTail, kDualityCheck, kWalkTests, kWindowCounts, kFit, kReport };

inline constexpr std::string_view to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kPersistence: return "persistence";
    case ExperimentKind::kTail: return "tail";
    case ExperimentKind::kDualityCheck: return "duality-check";
    case ExperimentKind::kWalkTests: return "walk-tests";
    case ExperimentKind::kWindowCounts: return "window-counts";
    case ExperimentKind::kFit: return "fit";
    case ExperimentKind::kReport: return "report";
  }
  return "?";
}

// Bad config or bad input files; maps to exit status kExitInvalid.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline ExperimentKind parse_experiment_kind(std::string_view s) {
  for (auto k : {ExperimentKind::kPersistence, ExperimentKind::kTail, ExperimentKind::kDualityCheck,
                 ExperimentKind::kWalkTests, ExperimentKind::kWindowCounts, ExperimentKind::kFit,
                 ExperimentKind::kReport})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown experiment kind '" + std::string(s) +
                    "' (expected persistence|tail|duality-check|walk-tests|window-counts|fit|report)");
}

enum class OutputFormat { kCsv, kJson };

inline constexpr int kExitComplete = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitDegraded = 3;

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kPersistence;
  std::vector<double> t_grid;
  double rho = 0.5;
  std::vector<double> level_alpha{0.75};
  std::int64_t replicas = 1000;
  std::int64_t marks_per_replica = 200;
  std::uint64_t seed = 1;
  std::uint64_t jump_budget = 0;  // 0: unlimited
  std::string method = "plain";   // persistence: plain | smc
  SmcOptions smc;
  std::int64_t forward_replicas = 0;  // duality-check; 0: 10 x replicas
  std::int32_t torus_side = 0;        // duality-check; 0: smallest multiple of 8 with L >= 8 sqrt(t)
  std::vector<double> annulus_t{100.0, 400.0};
  std::vector<std::string> inputs;  // fit, report

  // Not part of the results: they never change a number.
  std::size_t workers = 0;  // 0: $VOTERLAB_WORKERS, else 1
  std::string out;
  OutputFormat format = OutputFormat::kCsv;
  std::string trace;

  bool simulates() const { return kind != ExperimentKind::kFit && kind != ExperimentKind::kReport; }
};

inline std::vector<double> default_t_grid(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kDualityCheck: return {16.0};
    case ExperimentKind::kWalkTests: return {1000.0, 10000.0};
    case ExperimentKind::kWindowCounts: return {100.0, 1000.0};
    default: return {100.0};
  }
}

namespace detail {
template <typename T>
T get_as(const nlohmann::json& j, std::string_view key) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config field '" + std::string(key) + "' has the wrong type");
  }
}

inline std::vector<double> number_list(const nlohmann::json& j, std::string_view key) {
  if (j.is_number()) return {j.get<double>()};
  if (!j.is_array()) throw ConfigError("config field '" + std::string(key) + "' must be a number or a list");
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw ConfigError("config field '" + std::string(key) + "' must hold numbers only");
    out.push_back(v.get<double>());
  }
  return out;
}

inline std::int64_t positive_integer(const nlohmann::json& j, std::string_view key, std::int64_t min) {
  if (!j.is_number_integer()) throw ConfigError("config field '" + std::string(key) + "' must be an integer");
  const auto v = j.get<std::int64_t>();
  if (v < min) throw ConfigError("config field '" + std::string(key) + "' must be >= " + std::to_string(min));
  return v;
}
}  // namespace detail

inline void validate(ExperimentConfig& c) {
  if (c.simulates() && c.t_grid.empty()) c.t_grid = default_t_grid(c.kind);
  for (double t : c.t_grid)
    if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("t_grid values must be positive and finite");
  for (double t : c.annulus_t)
    if (!(std::sqrt(t) >= 10.0)) throw ConfigError("annulus_t values must satisfy sqrt(t) >= 10");
  if (c.replicas < 2) throw ConfigError("replicas must be >= 2");
  if (c.marks_per_replica < 1) throw ConfigError("marks_per_replica must be >= 1");
  if (c.method != "plain" && c.method != "smc") throw ConfigError("method must be 'plain' or 'smc'");
  if (c.smc.runs < 2 || c.smc.particles < 1) throw ConfigError("smc.runs must be >= 2 and smc.particles >= 1");
  const bool needs_rho = c.kind == ExperimentKind::kPersistence || c.kind == ExperimentKind::kTail ||
                         c.kind == ExperimentKind::kDualityCheck;
  if (needs_rho && !(c.rho > 0.0 && c.rho < 1.0)) throw ConfigError("rho must be in (0, 1)");
  if (c.kind == ExperimentKind::kTail) {
    if (c.level_alpha.empty()) throw ConfigError("level_alpha must list at least one level");
    for (double a : c.level_alpha)
      if (!(a > c.rho && a < 1.0)) throw ConfigError("level_alpha values must lie in (rho, 1)");
  }
  if (c.kind == ExperimentKind::kDualityCheck) {
    for (double a : c.level_alpha)
      if (!(a > 0.0 && a <= 1.0)) throw ConfigError("level_alpha values must lie in (0, 1]");
    if (c.torus_side != 0 && c.torus_side < 4) throw ConfigError("torus_side must be >= 4");
  }
  if (c.kind == ExperimentKind::kReport && c.inputs.empty())
    throw ConfigError("report: empty results set (give at least one results file)");
  if (c.kind == ExperimentKind::kFit && c.inputs.empty())
    throw ConfigError("fit: no input results files");
  if (c.out.empty()) {
    if (c.kind == ExperimentKind::kReport) c.out = "report.md";
    else c.out = std::string(to_string(c.kind)) + (c.format == OutputFormat::kJson ? ".json" : ".csv");
  }
}

// Parses a config document; validate() checks it and fills defaults.
// Unknown fields are errors.
inline ExperimentConfig parse_config(const nlohmann::json& j, std::optional<ExperimentKind> kind = std::nullopt) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  if (j.contains("kind")) {
    c.kind = parse_experiment_kind(detail::get_as<std::string>(j["kind"], "kind"));
    if (kind && *kind != c.kind)
      throw ConfigError("config kind '" + std::string(to_string(c.kind)) + "' does not match subcommand '" +
                        std::string(to_string(*kind)) + "'");
  } else if (kind) {
    c.kind = *kind;
  } else {
    throw ConfigError("config has no 'kind'");
  }
  for (const auto& [key, v] : j.items()) {
    if (key == "kind") continue;
    else if (key == "t_grid") c.t_grid = detail::number_list(v, key);
    else if (key == "rho") c.rho = detail::get_as<double>(v, key);
    else if (key == "level_alpha") c.level_alpha = detail::number_list(v, key);
    else if (key == "replicas") c.replicas = detail::positive_integer(v, key, 1);
    else if (key == "marks_per_replica") c.marks_per_replica = detail::positive_integer(v, key, 1);
    else if (key == "seed") {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        throw ConfigError("config field 'seed' must be a non-negative 64-bit integer");
      c.seed = v.get<std::uint64_t>();
    } else if (key == "jump_budget") c.jump_budget = static_cast<std::uint64_t>(detail::positive_integer(v, key, 0));
    else if (key == "workers") c.workers = static_cast<std::size_t>(detail::positive_integer(v, key, 1));
    else if (key == "method") c.method = detail::get_as<std::string>(v, key);
    else if (key == "smc") {
      if (!v.is_object()) throw ConfigError("config field 'smc' must be an object");
      for (const auto& [k2, v2] : v.items()) {
        if (k2 == "runs") c.smc.runs = static_cast<std::size_t>(detail::positive_integer(v2, "smc.runs", 2));
        else if (k2 == "particles") c.smc.particles = static_cast<std::size_t>(detail::positive_integer(v2, "smc.particles", 1));
        else if (k2 == "stages") c.smc.stages = static_cast<std::size_t>(detail::positive_integer(v2, "smc.stages", 0));
        else throw ConfigError("unknown config field 'smc." + k2 + "'");
      }
    } else if (key == "forward_replicas") c.forward_replicas = detail::positive_integer(v, key, 2);
    else if (key == "torus_side") c.torus_side = static_cast<std::int32_t>(detail::positive_integer(v, key, 4));
    else if (key == "annulus_t") c.annulus_t = detail::number_list(v, key);
    else if (key == "inputs") {
      if (!v.is_array()) throw ConfigError("config field 'inputs' must be a list of paths");
      for (const auto& p : v) c.inputs.push_back(detail::get_as<std::string>(p, key));
    } else if (key == "out") c.out = detail::get_as<std::string>(v, key);
    else if (key == "format") {
      const auto f = detail::get_as<std::string>(v, key);
      if (f == "csv") c.format = OutputFormat::kCsv;
      else if (f == "json") c.format = OutputFormat::kJson;
      else throw ConfigError("format must be 'csv' or 'json'");
    } else if (key == "trace") c.trace = detail::get_as<std::string>(v, key);
    else throw ConfigError("unknown config field '" + key + "'");
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path, std::optional<ExperimentKind> kind = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
  return parse_config(j, kind);
}

// The part of the config that determines the numbers, in canonical form.
inline nlohmann::ordered_json config_echo(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(c.kind);
  if (c.simulates()) {
    j["t_grid"] = c.t_grid;
    j["rho"] = c.rho;
    j["level_alpha"] = c.level_alpha;
    j["replicas"] = c.replicas;
    j["marks_per_replica"] = c.marks_per_replica;
    j["seed"] = c.seed;
    j["jump_budget"] = c.jump_budget;
    j["method"] = c.method;
    j["smc"] = {{"runs", c.smc.runs}, {"particles", c.smc.particles}, {"stages", c.smc.stages}};
    j["forward_replicas"] = c.forward_replicas;
    j["torus_side"] = c.torus_side;
    j["annulus_t"] = c.annulus_t;
  } else {
    j["inputs"] = c.inputs;
    j["level_alpha"] = c.level_alpha;
  }
  return j;
}

struct ExperimentRecord {
  std::uint64_t index = 0;  // experiment index in the stream key
  std::string label;
  std::int64_t replicas = 0;
  std::int64_t aborted = 0;
  std::vector<std::string> flags;
};

struct RunResult {
  Table table;
  std::vector<ExperimentRecord> experiments;
  std::vector<std::string> warnings;
  nlohmann::ordered_json manifest;
  std::string manifest_hash;
  std::string results_path;
  std::string manifest_path;
  bool degraded = false;
  int exit_status() const { return degraded ? kExitDegraded : kExitComplete; }
};

inline std::vector<std::string> flag_names(std::uint32_t flags) {
  std::vector<std::string> out;
  if (flags & kFlagOutsideValidityWindow) out.emplace_back("outside_validity_window");
  if (flags & kFlagTorusTooSmall) out.emplace_back("torus_too_small");
  if (flags & kFlagFewHits) out.emplace_back("few_hits");
  if (flags & kFlagAbortedReplicas) out.emplace_back("aborted_replicas");
  return out;
}

namespace detail {
inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

// Hands out experiment indices in a fixed order and records them.
class ExperimentLog {
 public:
  explicit ExperimentLog(std::uint64_t seed) : seed_(seed) {}
  StreamSource open(std::string label) {
    ExperimentRecord r;
    r.index = records_.size();
    r.label = std::move(label);
    records_.push_back(std::move(r));
    return {seed_, records_.back().index};
  }
  ExperimentRecord& last() { return records_.back(); }
  std::vector<ExperimentRecord>& records() { return records_; }

 private:
  std::uint64_t seed_;
  std::vector<ExperimentRecord> records_;
};

inline std::string label_t(double t) { return "t=" + format_number(t); }

inline std::int32_t auto_torus_side(double t) {
  const auto need = static_cast<std::int32_t>(std::ceil(8.0 * std::sqrt(t)));
  return std::max<std::int32_t>(8, (need + 7) / 8 * 8);
}

inline void run_persistence(const ExperimentConfig& c, const RunOptions& opts, ExperimentLog& log, Table& out) {
  for (double t : c.t_grid) {
    const auto streams = log.open(label_t(t) + (c.method == "smc" ? " smc" : ""));
    const auto e = c.method == "smc" ? persistence_dual_smc(t, c.rho, streams, opts, c.smc)
                                     : persistence_dual(t, c.rho, c.replicas, streams, opts);
    log.last().replicas = e.replicas;
    log.last().aborted = e.aborted;
    out.add_row({format_number(t), format_number(c.rho), format_number(e.mean), format_number(e.std_error),
                 format_number(e.replicas), format_number(e.aborted)});
  }
}

inline void run_tail(const ExperimentConfig& c, const RunOptions& opts, ExperimentLog& log, Table& out) {
  for (double t : c.t_grid) {
    const auto streams = log.open(label_t(t));
    const auto es = tail_dual_levels(t, c.rho, c.level_alpha, c.replicas, c.marks_per_replica, streams, opts);
    log.last().replicas = es.front().replicas;
    log.last().aborted = es.front().aborted;
    for (const auto& e : es)
      out.add_row({format_number(t), format_number(c.rho), format_number(e.level_alpha), format_number(e.prob),
                   format_number(e.std_error), format_number(e.replicas), format_number(e.marks_per_replica),
                   format_number(e.aborted)});
  }
}

inline void run_window(const ExperimentConfig& c, const RunOptions& opts, ExperimentLog& log, Table& out) {
  for (double t : c.t_grid) {
    const auto streams = log.open(label_t(t) + " window [t/2, t]");
    const auto e = mean_window_count(t, c.replicas, streams, opts);
    log.last().replicas = e.n;
    log.last().aborted = c.replicas - e.n;
    out.add_row({format_number(t), format_number(e.mean), format_number(e.std_error), format_number(e.n)});
  }
}

inline void run_duality(const ExperimentConfig& c, const RunOptions& opts, ExperimentLog& log, Table& out) {
  const std::int64_t forward_replicas = c.forward_replicas > 0 ? c.forward_replicas : 10 * c.replicas;
  for (double t : c.t_grid) {
    TorusConfig torus;
    torus.side = c.torus_side > 0 ? c.torus_side : auto_torus_side(t);
    torus.horizon = t;
    torus.rho = c.rho;
    std::vector<double> levels{1.0};
    for (double a : c.level_alpha)
      if (a < 1.0) levels.push_back(a);
    for (double a : levels) {
      const std::string what = a == 1.0 ? " persistence" : " tail level_alpha=" + format_number(a);
      const auto fs = log.open(label_t(t) + what + " forward L=" + std::to_string(torus.side));
      const auto fwd = a == 1.0 ? forward_persistence_mc(torus, forward_replicas, fs, opts)
                                : forward_tail_mc(torus, a, forward_replicas, fs, opts);
      log.last().replicas = fwd.replicas;
      log.last().flags = flag_names(fwd.flags);
      const auto ds = log.open(label_t(t) + what + " dual");
      double p = 0.0, se = 0.0;
      std::int64_t n = 0;
      if (a == 1.0) {
        const auto d = persistence_dual(t, c.rho, c.replicas, ds, opts);
        p = d.mean, se = d.std_error, n = d.replicas;
        log.last().aborted = d.aborted;
      } else if (a > c.rho) {
        const auto d = tail_dual(t, c.rho, a, c.replicas, c.marks_per_replica, ds, opts);
        p = d.prob, se = d.std_error, n = d.replicas;
        log.last().aborted = d.aborted;
      } else {
        throw ConfigError("duality-check: level_alpha values below 1 must exceed rho");
      }
      log.last().replicas = n;
      const double combined = combined_stderr(fwd.std_error, se);
      const double z = combined > 0.0 ? (fwd.mean - p) / combined : (fwd.mean == p ? 0.0 : std::nan(""));
      const bool agree = agree_within(fwd.mean, fwd.std_error, p, se, 3.0);
      out.add_row({format_number(t), format_number(c.rho), format_number(a), format_number(fwd.mean),
                   format_number(fwd.std_error), format_number(fwd.replicas), format_number(p), format_number(se),
                   format_number(n), format_number(z), agree ? "agree" : "disagree"});
    }
  }
}

inline void run_walks(const ExperimentConfig& c, const RunOptions& opts, ExperimentLog& log, Table& out) {
  auto row = [&](std::string test, double t, double param, const ProbEstimate& e, double reference) {
    log.last().replicas = e.replicas;
    log.last().flags = flag_names(e.flags);
    out.add_row({std::move(test), format_number(t), format_number(param), format_number(e.mean),
                 format_number(e.std_error), format_number(reference),
                 format_number(std::isnan(reference) || reference == 0.0 ? std::nan("") : e.mean / reference),
                 format_number(e.replicas)});
  };
  for (double t : c.t_grid) {
    if (!(t > std::exp(2.0))) throw ConfigError("walk-tests: t_grid values must exceed e^2");
    const double radius = std::sqrt(t);
    for (double power : {0.125, 0.25, 0.375}) {
      const Site x{static_cast<std::int32_t>(std::max(1.0, std::round(std::pow(t, power)))), 0};
      log.open(label_t(t) + " hit from |x|=" + format_number(x.norm()));
      const auto e = hit_origin_before_exit_mc(x, radius, c.replicas, {c.seed, log.last().index}, opts);
      row("hit", t, x.norm(), e, lawler_reference_hit_before_exit(x, t));
    }
    for (double s : {2.0 * t / std::log(t), t / 4.0, 0.45 * t}) {
      log.open(label_t(t) + " meet s=" + format_number(s));
      const auto e = meet_prob_mc(s, t, c.replicas, {c.seed, log.last().index}, opts);
      row("meet", t, s, e, (std::log(t) - std::log(s)) / std::log(t));
    }
  }
  for (double t : c.annulus_t) {
    log.open(label_t(t) + " annulus");
    const auto e = annulus_stay_prob_mc(t, c.replicas, {c.seed, log.last().index}, opts);
    row("annulus", t, 0.0, e, std::nan(""));
  }
}

inline std::vector<ScalingPoint> scaling_points(const Table& t, std::optional<double> level) {
  std::vector<ScalingPoint> pts;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (level && t.number(r, "level_alpha") != *level) continue;
    pts.push_back({t.number(r, "t"), t.number(r, "p_hat"), t.number(r, "stderr")});
  }
  return pts;
}

inline std::vector<double> distinct_values(const Table& t, std::string_view column) {
  std::vector<double> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const double v = t.number(r, column);
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline void run_fit(const ExperimentConfig& c, Table& out, std::vector<std::string>& warnings) {
  std::vector<ScalingPoint> pts;
  std::string schema;
  for (const auto& path : c.inputs) {
    Table in;
    try {
      in = read_table(path);
    } catch (const SchemaError& e) {
      throw ConfigError(e.what());
    }
    if (in.schema != "persistence" && in.schema != "tail")
      throw ConfigError("fit: " + path + " has schema '" + in.schema + "'; fit takes persistence or tail results");
    if (!schema.empty() && schema != in.schema)
      throw ConfigError("fit: inputs mix '" + schema + "' and '" + in.schema + "' results");
    schema = in.schema;
    std::optional<double> level;
    if (in.schema == "tail") {
      const auto levels = distinct_values(in, "level_alpha");
      if (levels.size() == 1) {
        level = levels.front();
      } else if (c.level_alpha.size() == 1 &&
                 std::find(levels.begin(), levels.end(), c.level_alpha.front()) != levels.end()) {
        level = c.level_alpha.front();
      } else {
        std::string list;
        for (double a : levels) list += " " + format_number(a);
        throw ConfigError("fit: " + path + " holds several levels (" + list.substr(1) +
                          "); select one with a single level_alpha");
      }
    }
    const auto p = scaling_points(in, level);
    pts.insert(pts.end(), p.begin(), p.end());
  }
  for (auto model : {ScalingModel::kLog, ScalingModel::kLogSquared}) {
    ScalingFit f;
    try {
      f = fit_scaling(pts, model);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("fit: ") + e.what());
    }
    if (model == ScalingModel::kLog) warnings.insert(warnings.end(), f.warnings.begin(), f.warnings.end());
    out.add_row({std::string(to_string(model)), format_number(f.slope), format_number(f.slope_std_error),
                 format_number(f.intercept), format_number(f.r_squared),
                 format_number(static_cast<std::int64_t>(f.n_points()))});
  }
}

inline std::string_view schema_for(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kPersistence: return "persistence";
    case ExperimentKind::kTail: return "tail";
    case ExperimentKind::kWindowCounts: return "window";
    case ExperimentKind::kDualityCheck: return "duality";
    case ExperimentKind::kWalkTests: return "walk";
    case ExperimentKind::kFit: return "fit";
    default: throw std::logic_error("no results schema for this kind");
  }
}

inline void write_file(const std::string& path, const std::string& bytes) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << bytes;
  if (!os) throw std::runtime_error("write failed: " + path);
}
}  // namespace detail

inline std::string manifest_path_for(const std::string& results_path) { return results_path + ".manifest.json"; }

// Runs a simulation or fit experiment and writes its results and manifest.
inline RunResult run_experiment(ExperimentConfig c) {
  if (c.kind == ExperimentKind::kReport) throw std::logic_error("run_experiment: use write_report for reports");
  validate(c);
  const auto started = std::chrono::steady_clock::now();
  RunOptions opts;
  opts.workers = c.workers > 0 ? c.workers : default_workers();
  opts.jump_budget = c.jump_budget;

  RunResult r;
  r.table = make_table(detail::schema_for(c.kind));
  detail::ExperimentLog log(c.seed);
  try {
    switch (c.kind) {
      case ExperimentKind::kPersistence: detail::run_persistence(c, opts, log, r.table); break;
      case ExperimentKind::kTail: detail::run_tail(c, opts, log, r.table); break;
      case ExperimentKind::kWindowCounts: detail::run_window(c, opts, log, r.table); break;
      case ExperimentKind::kDualityCheck: detail::run_duality(c, opts, log, r.table); break;
      case ExperimentKind::kWalkTests: detail::run_walks(c, opts, log, r.table); break;
      case ExperimentKind::kFit: detail::run_fit(c, r.table, r.warnings); break;
      case ExperimentKind::kReport: break;
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  r.experiments = log.records();

  if (!c.trace.empty() && c.simulates()) {
    // The dual sample of replica 0 of experiment 0.
    std::vector<TraceRecord> trace;
    DualOptions dual;
    dual.trace = &trace;
    dual.jump_budget = c.jump_budget;
    auto rng = make_stream(c.seed, 0, 0);
    simulate_dual(c.t_grid.front(), rng, dual);
    std::ostringstream bytes;
    write_trace(bytes, trace);
    detail::write_file(c.trace, bytes.str());
  }

  nlohmann::ordered_json m;
  m["artifact"] = "voterlab";
  m["version"] = kArtifactVersion;
  m["schema"] = r.table.schema;
  m["schema_version"] = kSchemaVersion;
  m["config"] = config_echo(c);
  auto experiments = nlohmann::ordered_json::array();
  auto transcript = nlohmann::ordered_json::array();
  std::int64_t aborted_total = 0;
  for (const auto& e : r.experiments) {
    experiments.push_back({{"index", e.index},
                           {"label", e.label},
                           {"replicas", e.replicas},
                           {"aborted", e.aborted},
                           {"flags", e.flags}});
    transcript.push_back({{"experiment", e.index},
                          {"label", e.label},
                          {"replica_0_key", detail::hex64(derive_stream_key(c.seed, e.index, 0))},
                          {"replica_1_key", detail::hex64(derive_stream_key(c.seed, e.index, 1))}});
    aborted_total += e.aborted;
  }
  r.degraded = aborted_total > 0;
  m["experiments"] = std::move(experiments);
  m["seed_derivation"] = {
      {"seed", c.seed},
      {"scheme",
       "key(seed, j, i) = sm(sm(sm(seed) ^ (j * 0xd1b54a32d192ed03)) ^ (i * 0xa0761d6478bd642f)), "
       "sm = splitmix64 finalizer; the key seeds xoshiro256++ through four splitmix64 steps; "
       "j = experiment index below, i = replica index (for smc: run index)"},
      {"experiments", std::move(transcript)}};
  m["aborted_total"] = aborted_total;
  m["status"] = r.degraded ? "degraded" : "complete";
  m["warnings"] = r.warnings;
  r.manifest_hash = "fnv1a64:" + fnv1a_hex(m.dump());

  std::ostringstream results;
  if (c.format == OutputFormat::kJson) write_json(results, r.table, r.manifest_hash);
  else write_csv(results, r.table, r.manifest_hash);
  r.results_path = c.out;
  r.manifest_path = manifest_path_for(c.out);
  detail::write_file(r.results_path, results.str());

  m["manifest_hash"] = r.manifest_hash;
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  m["run"] = {{"wall_clock_seconds", seconds},
              {"workers", opts.workers},
              {"results", r.results_path},
              {"format", c.format == OutputFormat::kJson ? "json" : "csv"},
              {"trace", c.trace}};
  r.manifest = m;
  detail::write_file(r.manifest_path, m.dump(2) + "\n");
  return r;
}

// ---------------------------------------------------------------- report

struct ReportResult {
  std::string summary_path;
  std::vector<std::string> plot_paths;
  std::string summary;
};

namespace detail {
inline std::string pass_fail(bool ok) { return ok ? "PASS" : "FAIL"; }

inline std::string md_row(const std::vector<std::string>& cells) {
  std::string s = "|";
  for (const auto& c : cells) s += " " + c + " |";
  return s + "\n";
}

inline std::string md_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::string s = md_row(header);
  s += "|";
  for (std::size_t i = 0; i < header.size(); ++i) s += "---|";
  s += "\n";
  for (const auto& r : rows) s += md_row(r);
  return s;
}

inline std::string fixed(double v, int digits = 4) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

class PlotWriter {
 public:
  explicit PlotWriter(std::string stem) : stem_(std::move(stem)) {}
  std::string write(const std::string& name, const std::vector<std::array<double, 3>>& xyz,
                    std::string_view x_label, std::string_view y_label) {
    std::ostringstream os;
    os << "# x: " << x_label << "\n# y: " << y_label << "\nx,y,yerr\n";
    for (const auto& p : xyz) os << format_number(p[0]) << "," << format_number(p[1]) << "," << format_number(p[2]) << "\n";
    const std::string path = stem_ + "." + name + ".xy.csv";
    write_file(path, os.str());
    paths.push_back(path);
    return path;
  }
  std::vector<std::string> paths;

 private:
  std::string stem_;
};

inline std::string fit_block(const std::vector<ScalingPoint>& pts, std::optional<ScalingFit>* log_fit,
                             std::optional<ScalingFit>* sq_fit) {
  std::string s;
  std::vector<std::vector<std::string>> rows;
  for (auto model : {ScalingModel::kLog, ScalingModel::kLogSquared}) {
    try {
      auto f = fit_scaling(pts, model);
      rows.push_back({std::string(to_string(model)), fixed(f.slope), fixed(f.slope_std_error),
                      fixed(f.slope - 1.96 * f.slope_std_error) + " .. " + fixed(f.slope + 1.96 * f.slope_std_error),
                      fixed(f.intercept), fixed(f.r_squared, 6), std::to_string(f.n_points())});
      for (const auto& w : f.warnings) s += "- warning: " + w + "\n";
      (model == ScalingModel::kLog ? *log_fit : *sq_fit) = std::move(f);
    } catch (const std::invalid_argument& e) {
      s += "- fit skipped (" + std::string(to_string(model)) + "): " + e.what() + "\n";
    }
  }
  if (!rows.empty())
    s = md_table({"model", "slope", "slope stderr", "95% CI", "intercept", "R^2", "points"}, rows) + "\n" + s;
  return s;
}

inline std::string report_persistence(const Table& t, PlotWriter& plots, const std::string& tag) {
  std::string s;
  for (double rho : distinct_values(t, "rho")) {
    std::vector<std::vector<std::string>> rows;
    std::vector<ScalingPoint> pts;
    std::vector<std::array<double, 3>> xy;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      if (t.number(r, "rho") != rho) continue;
      const double tt = t.number(r, "t"), p = t.number(r, "p_hat"), se = t.number(r, "stderr");
      rows.push_back({fixed(tt, 6), fixed(p, 6), fixed(se, 4), p > 0 ? fixed(-std::log(p), 6) : "inf",
                      t.rows[r][t.column("replicas")], t.rows[r][t.column("aborted")]});
      pts.push_back({tt, p, se});
      if (p > 0) xy.push_back({tt, -std::log(p), se / p});
    }
    s += "### rho = " + format_number(rho) + "\n\n";
    s += md_table({"t", "p_hat", "stderr", "-log p_hat", "replicas", "aborted"}, rows) + "\n";
    std::optional<ScalingFit> lf, sf;
    s += fit_block(pts, &lf, &sf);
    if (lf && sf) {
      s += "- log^2 model fits better than log model: " + pass_fail(sf->r_squared > lf->r_squared) + "\n";
      s += "- log-model residuals show the convex sign pattern: " +
           pass_fail(convex_residual_pattern(lf->residuals)) + "\n";
    }
    s += "- plot: " + plots.write(tag + ".rho=" + format_number(rho), xy, "t", "-log p_hat") + "\n\n";
  }
  return s;
}

inline std::string report_tail(const Table& t, PlotWriter& plots, const std::string& tag) {
  std::string s;
  for (double rho : distinct_values(t, "rho")) {
    s += "### rho = " + format_number(rho) + "\n\n";
    std::vector<std::pair<double, ScalingFit>> log_fits;
    std::optional<ScalingFit> lowest_sq;
    for (double a : distinct_values(t, "level_alpha")) {
      std::vector<std::vector<std::string>> rows;
      std::vector<ScalingPoint> pts;
      std::vector<std::array<double, 3>> xy;
      for (std::size_t r = 0; r < t.rows.size(); ++r) {
        if (t.number(r, "rho") != rho || t.number(r, "level_alpha") != a) continue;
        const double tt = t.number(r, "t"), p = t.number(r, "p_hat"), se = t.number(r, "stderr");
        rows.push_back({fixed(tt, 6), fixed(p, 6), fixed(se, 4), p > 0 ? fixed(-std::log(p), 6) : "inf",
                        t.rows[r][t.column("replicas")], t.rows[r][t.column("marks")],
                        t.rows[r][t.column("aborted")]});
        pts.push_back({tt, p, se});
        if (p > 0) xy.push_back({tt, -std::log(p), se / p});
      }
      if (rows.empty()) continue;
      s += "#### level_alpha = " + format_number(a) + "\n\n";
      s += md_table({"t", "p_hat", "stderr", "-log p_hat", "replicas", "marks", "aborted"}, rows) + "\n";
      std::optional<ScalingFit> lf, sf;
      s += fit_block(pts, &lf, &sf);
      if (lf) {
        s += "- linear in log t (R^2 >= 0.95): " + pass_fail(lf->r_squared >= 0.95) + "\n";
        if (log_fits.empty() && sf)
          s += "- no log^2 dominance (R^2(log) >= R^2(log^2) - 0.02): " +
               pass_fail(lf->r_squared >= sf->r_squared - 0.02) + "\n";
        log_fits.emplace_back(a, *lf);
      }
      s += "- plot: " + plots.write(tag + ".rho=" + format_number(rho) + ".level=" + format_number(a), xy, "t",
                                    "-log p_hat") + "\n\n";
    }
    if (log_fits.size() >= 2) {
      bool increasing = true;
      std::string list;
      for (std::size_t i = 0; i < log_fits.size(); ++i) {
        list += (i ? ", " : "") + format_number(log_fits[i].first) + ": " + fixed(log_fits[i].second.slope);
        if (i > 0 && !(log_fits[i].second.slope > log_fits[i - 1].second.slope)) increasing = false;
      }
      s += "- fitted rate I(level) = {" + list + "} strictly increasing: " + pass_fail(increasing) + "\n\n";
    }
  }
  return s;
}

inline std::string report_window(const Table& t, PlotWriter& plots, const std::string& tag) {
  std::vector<std::vector<std::string>> rows;
  std::vector<double> xs, ys, ws;
  std::vector<std::array<double, 3>> xy;
  double lo = INFINITY, hi = 0.0;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const double tt = t.number(r, "t"), m = t.number(r, "mean_count"), se = t.number(r, "stderr");
    rows.push_back({fixed(tt, 6), fixed(m, 6), fixed(se, 4), fixed(m / std::log(tt), 4), t.rows[r][t.column("replicas")]});
    xs.push_back(std::log(tt));
    ys.push_back(m);
    ws.push_back(1.0);
    xy.push_back({tt, m, se});
    lo = std::min(lo, m / std::log(tt));
    hi = std::max(hi, m / std::log(tt));
  }
  std::string s = md_table({"t", "mean count", "stderr", "mean / log t", "replicas"}, rows) + "\n";
  try {
    const auto f = fit_line(xs, ys, ws);
    s += "- fit mean = a + b log t: a = " + fixed(f.intercept) + ", b = " + fixed(f.slope) + " +- " +
         fixed(f.slope_std_error) + ", R^2 = " + fixed(f.r_squared, 6) + "\n";
    s += "- R^2 >= 0.95 and b > 0: " + pass_fail(f.r_squared >= 0.95 && f.slope > 0.0) + "\n";
  } catch (const std::invalid_argument& e) {
    s += "- fit skipped: " + std::string(e.what()) + "\n";
  }
  if (!rows.empty()) s += "- mean / log t varies by less than a factor 2: " + pass_fail(hi < 2.0 * lo) + "\n";
  s += "- plot: " + plots.write(tag, xy, "t", "mean window count") + "\n\n";
  return s;
}

inline std::string report_fit(const Table& t) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : t.rows) rows.push_back(r);
  std::string s = md_table({"model", "slope", "slope stderr", "intercept", "R^2", "points"}, rows) + "\n";
  double r_log = NAN, r_sq = NAN;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (t.rows[r][0] == "log") r_log = t.number(r, "r_squared");
    if (t.rows[r][0] == "log2") r_sq = t.number(r, "r_squared");
  }
  if (!std::isnan(r_log) && !std::isnan(r_sq))
    s += "- preferred model by R^2: " + std::string(r_sq > r_log ? "log^2" : "log") + "\n";
  return s + "\n";
}

inline std::string report_duality(const Table& t) {
  std::vector<std::vector<std::string>> rows;
  bool all = true;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    rows.push_back({row[0], row[2], fixed(t.number(r, "forward_p"), 6) + " +- " + fixed(t.number(r, "forward_stderr"), 3),
                    fixed(t.number(r, "dual_p"), 6) + " +- " + fixed(t.number(r, "dual_stderr"), 3),
                    fixed(t.number(r, "z"), 3), row[t.column("verdict")]});
    all = all && row[t.column("verdict")] == "agree";
  }
  return md_table({"t", "level_alpha", "forward", "dual", "z", "verdict"}, rows) +
         "\n- forward and dual agree within 3 combined stderr everywhere: " + pass_fail(all) + "\n\n";
}

inline std::string report_walk(const Table& t, PlotWriter& plots, const std::string& tag) {
  std::string s;
  for (const std::string test : {"hit", "meet", "annulus"}) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::array<double, 3>> xy;
    double lo = INFINITY, hi = 0.0;
    std::vector<std::pair<double, double>> ann;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      if (t.rows[r][0] != test) continue;
      const double e = t.number(r, "estimate"), se = t.number(r, "stderr"), ratio = t.number(r, "ratio");
      rows.push_back({fixed(t.number(r, "t"), 6), fixed(t.number(r, "param"), 6), fixed(e, 6), fixed(se, 4),
                      fixed(t.number(r, "reference"), 6), fixed(ratio, 4), t.rows[r][t.column("replicas")]});
      if (!std::isnan(ratio)) {
        lo = std::min(lo, ratio);
        hi = std::max(hi, ratio);
      }
      xy.push_back({test == "annulus" ? t.number(r, "t") : t.number(r, "param"), e, se});
      if (test == "annulus") ann.emplace_back(e, se);
    }
    if (rows.empty()) continue;
    s += "### " + test + "\n\n";
    s += md_table({"t", test == "meet" ? "s" : (test == "hit" ? "|x|" : "-"), "estimate", "stderr", "reference",
                   "ratio", "replicas"},
                  rows) + "\n";
    if (test == "hit") s += "- ratios within [1/3, 3]: " + pass_fail(lo >= 1.0 / 3.0 && hi <= 3.0) + "\n";
    if (test == "meet" && hi > 0.0)
      s += "- ratios span [" + fixed(lo) + ", " + fixed(hi) + "], K4/K3 = " + fixed(hi / lo) + "\n";
    if (test == "annulus") {
      bool positive = true, agree = true;
      for (std::size_t i = 0; i < ann.size(); ++i) {
        positive = positive && ann[i].first > 0.0;
        for (std::size_t k = 0; k < i; ++k)
          agree = agree && agree_within(ann[i].first, ann[i].second, ann[k].first, ann[k].second, 3.0);
      }
      s += "- strictly positive: " + pass_fail(positive) + "; mutually within 3 combined stderr: " + pass_fail(agree) + "\n";
    }
    s += "- plot: " + plots.write(tag + "." + test, xy, test == "annulus" ? "t" : "param", "estimate") + "\n\n";
  }
  return s;
}
}  // namespace detail

// Summarizes results files, one section per file, in the order given. Files
// are never merged, so mixed kinds stay apart.
inline ReportResult write_report(const std::vector<std::string>& inputs, const std::string& out_path) {
  if (inputs.empty()) throw ConfigError("report: empty results set (give at least one results file)");
  std::vector<Table> tables;
  std::string errors;
  for (const auto& path : inputs) {
    try {
      tables.push_back(read_table(path));
    } catch (const SchemaError& e) {
      errors += std::string(e.what()) + "\n";
    } catch (const std::runtime_error& e) {
      errors += std::string(e.what()) + "\n";
    }
  }
  if (!errors.empty()) throw ConfigError("report: schema mismatch\n" + errors);

  const std::string stem = std::filesystem::path(out_path).replace_extension().string();
  detail::PlotWriter plots(stem);
  std::string s = "# voterlab report\n\n";
  s += "Inputs:\n\n";
  for (const auto& t : tables) s += "- `" + t.source + "` (" + t.schema + ", manifest " + (t.manifest_hash.empty() ? "none" : t.manifest_hash) + ")\n";
  s += "\n";
  for (std::size_t i = 0; i < tables.size(); ++i) {
    const auto& t = tables[i];
    const std::string tag = std::to_string(i + 1) + "-" + t.schema;
    s += "## " + std::to_string(i + 1) + ". " + t.schema + " — `" + t.source + "`\n\n";
    if (t.rows.empty()) {
      s += "No rows.\n\n";
      continue;
    }
    if (t.schema == "persistence") s += detail::report_persistence(t, plots, tag);
    else if (t.schema == "tail") s += detail::report_tail(t, plots, tag);
    else if (t.schema == "window") s += detail::report_window(t, plots, tag);
    else if (t.schema == "fit") s += detail::report_fit(t);
    else if (t.schema == "duality") s += detail::report_duality(t);
    else if (t.schema == "walk") s += detail::report_walk(t, plots, tag);
  }
  detail::write_file(out_path, s);
  return {out_path, plots.paths, s};
}

}  // namespace voterlab
