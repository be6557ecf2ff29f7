// voterlab: run one experiment from a JSON config, fit a results file, or
// summarize results files.
//
//   voterlab <kind> [--config PATH] [--seed N] [--workers N] [--out PATH]
//                   [--format csv|json] [--trace PATH] [inputs...]
//
// Exit status: 0 complete, 3 degraded (replicas aborted by the jump budget),
// 2 invalid config or input files, 1 any other failure.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "voterlab/experiments.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string out;
  std::string format;
  std::string trace;
  std::vector<std::string> inputs;
};

int run(voterlab::ExperimentKind kind, const Flags& f) {
  using namespace voterlab;
  ExperimentConfig cfg;
  if (!f.config.empty()) {
    cfg = load_config(f.config, kind);
  } else {
    cfg = parse_config(nlohmann::json::object(), kind);
  }
  if (f.seed) cfg.seed = *f.seed;
  if (f.workers) cfg.workers = *f.workers;
  if (!f.out.empty()) cfg.out = f.out;
  if (!f.format.empty()) cfg.format = f.format == "json" ? OutputFormat::kJson : OutputFormat::kCsv;
  if (!f.trace.empty()) cfg.trace = f.trace;
  cfg.inputs.insert(cfg.inputs.end(), f.inputs.begin(), f.inputs.end());

  if (kind == ExperimentKind::kReport) {
    validate(cfg);
    const auto r = write_report(cfg.inputs, cfg.out);
    std::cout << "report: " << r.summary_path << "\n";
    for (const auto& p : r.plot_paths) std::cout << "plot: " << p << "\n";
    return kExitComplete;
  }
  const auto r = run_experiment(cfg);
  std::cout << "results: " << r.results_path << "\n"
            << "manifest: " << r.manifest_path << "\n"
            << "status: " << (r.degraded ? "degraded" : "complete") << "\n";
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  return r.exit_status();
}

}  // namespace

int main(int argc, char** argv) {
  using voterlab::ExperimentKind;
  CLI::App app{"voter model / coalescing random walk experiments"};
  app.require_subcommand(1);
  Flags flags;
  std::optional<ExperimentKind> chosen;

  const std::vector<std::pair<ExperimentKind, std::string>> kinds{
      {ExperimentKind::kPersistence, "persistence probability P(T_t = t) over a t grid"},
      {ExperimentKind::kTail, "tail probabilities P(T_t >= level_alpha t) over a t grid"},
      {ExperimentKind::kDualityCheck, "forward voter vs dual estimates on a torus"},
      {ExperimentKind::kWalkTests, "hitting, meeting and annulus walk estimates against references"},
      {ExperimentKind::kWindowCounts, "mean distinct dual sites over [t/2, t]"},
      {ExperimentKind::kFit, "log and log^2 scaling fits of a persistence or tail results file"},
      {ExperimentKind::kReport, "summary and plot files from results files"},
  };
  for (const auto& [kind, help] : kinds) {
    auto* sub = app.add_subcommand(std::string(voterlab::to_string(kind)), help);
    sub->add_option("--config", flags.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "master seed (overrides config)");
    sub->add_option("--workers", flags.workers, "worker threads (default: config, then $VOTERLAB_WORKERS, then 1)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--out", flags.out, "results path (report: summary path)");
    sub->add_option("--format", flags.format, "results format")->check(CLI::IsMember({"csv", "json"}));
    sub->add_option("--trace", flags.trace, "write the binary trace of one dual sample here");
    if (kind == ExperimentKind::kFit || kind == ExperimentKind::kReport)
      sub->add_option("inputs", flags.inputs, "results files");
    sub->callback([&chosen, kind = kind] { chosen = kind; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : voterlab::kExitInvalid;
  }

  try {
    return run(*chosen, flags);
  } catch (const voterlab::ConfigError& e) {
    std::cerr << "voterlab: " << e.what() << "\n";
    return voterlab::kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "voterlab: " << e.what() << "\n";
    return voterlab::kExitFailure;
  }
}
