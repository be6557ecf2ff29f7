#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "voterlab/experiments.hpp"

using namespace voterlab;
namespace fs = std::filesystem;

namespace {
class Experiments : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("voterlab_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  static std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
  }

  void write(const std::string& p, const std::string& text) const { std::ofstream(p) << text; }

  RunResult run(const std::string& json, const std::string& out, std::size_t workers = 1) {
    auto c = parse_config(nlohmann::json::parse(json));
    c.out = path(out);
    c.workers = workers;
    return run_experiment(c);
  }

  fs::path dir_;
};
}  // namespace

TEST(Config, DefaultsAndOverrides) {
  auto c = parse_config(nlohmann::json::parse(R"({"kind":"tail","t_grid":[10,20],"level_alpha":0.8})"));
  validate(c);
  EXPECT_EQ(c.kind, ExperimentKind::kTail);
  EXPECT_EQ(c.level_alpha, std::vector<double>{0.8});
  EXPECT_EQ(c.out, "tail.csv");
  auto d = parse_config(nlohmann::json::object(), ExperimentKind::kDualityCheck);
  validate(d);
  EXPECT_EQ(d.t_grid, std::vector<double>{16.0});
}

TEST(Config, Rejections) {
  auto bad = [](const char* text) {
    auto c = parse_config(nlohmann::json::parse(text));
    validate(c);
  };
  EXPECT_THROW(bad(R"({"kind":"persistence","bogus":1})"), ConfigError);
  EXPECT_THROW(bad(R"({"kind":"nope"})"), ConfigError);
  EXPECT_THROW(bad(R"({"t_grid":[1]})"), ConfigError);
  EXPECT_THROW(bad(R"({"kind":"persistence","t_grid":[-1]})"), ConfigError);
  EXPECT_THROW(bad(R"({"kind":"persistence","replicas":1})"), ConfigError);
  EXPECT_THROW(bad(R"({"kind":"persistence","replicas":"many"})"), ConfigError);
  EXPECT_THROW(bad(R"({"kind":"persistence","rho":1.0})"), ConfigError);
  EXPECT_THROW(bad(R"({"kind":"tail","level_alpha":[0.4]})"), ConfigError);
  EXPECT_THROW(bad(R"({"kind":"persistence","method":"magic"})"), ConfigError);
  EXPECT_THROW(bad(R"({"kind":"persistence","seed":-3})"), ConfigError);
  EXPECT_THROW(bad(R"({"kind":"report"})"), ConfigError);
  EXPECT_THROW(bad(R"({"kind":"fit"})"), ConfigError);
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"kind":"tail"})"), ExperimentKind::kPersistence),
               ConfigError);
}

TEST(Config, LargeSeedIsExact) {
  auto c = parse_config(nlohmann::json::parse(R"({"kind":"persistence","seed":18446744073709551615})"));
  EXPECT_EQ(c.seed, 18446744073709551615ULL);
}

TEST(Config, EchoExcludesPresentation) {
  auto a = parse_config(nlohmann::json::parse(R"({"kind":"persistence","workers":1,"out":"a.csv"})"));
  auto b = parse_config(nlohmann::json::parse(R"({"kind":"persistence","workers":8,"out":"b.json","format":"json"})"));
  validate(a);
  validate(b);
  EXPECT_EQ(config_echo(a).dump(), config_echo(b).dump());
}

TEST(ResultsIo, NumbersRoundTrip) {
  for (double v : {0.1, 1e-300, 3.0, 123456789.125, 2.0 / 3.0}) {
    const auto s = format_number(v);
    EXPECT_EQ(std::stod(s), v) << s;
  }
  EXPECT_EQ(format_number(std::int64_t{42}), "42");
  EXPECT_EQ(format_number(std::nan("")), "nan");
}

TEST_F(Experiments, PersistenceRunTwiceIsByteIdentical) {
  const char* cfg = R"({"kind":"persistence","t_grid":[100],"replicas":10,"seed":1})";
  const auto a = run(cfg, "a.csv");
  const auto b = run(cfg, "b.csv");
  EXPECT_EQ(slurp(a.results_path), slurp(b.results_path));
  EXPECT_EQ(a.exit_status(), kExitComplete);
  const auto text = slurp(a.results_path);
  EXPECT_EQ(text.rfind("# voterlab results\n# schema: persistence\n# schema_version: 1\n# manifest_hash: fnv1a64:", 0), 0u);
  EXPECT_NE(text.find("\nt,rho,p_hat,stderr,replicas,aborted\n100,0.5,"), std::string::npos);
}

TEST_F(Experiments, WorkerCountDoesNotChangeBytes) {
  for (const char* cfg : {R"({"kind":"tail","t_grid":[40,400],"level_alpha":[0.6,0.9],"replicas":300,"marks_per_replica":20})",
                          R"({"kind":"persistence","t_grid":[300],"method":"smc","smc":{"runs":4,"particles":16}})",
                          R"({"kind":"walk-tests","t_grid":[100],"annulus_t":[100],"replicas":64})"}) {
    const auto a = run(cfg, "one.csv", 1);
    const auto b = run(cfg, "eight.csv", 8);
    EXPECT_EQ(slurp(a.results_path), slurp(b.results_path)) << cfg;
  }
}

TEST_F(Experiments, ManifestContents) {
  const auto r = run(R"({"kind":"window-counts","t_grid":[50,100],"replicas":20,"seed":9})", "w.csv");
  const auto m = nlohmann::json::parse(slurp(r.manifest_path));
  EXPECT_EQ(m["status"], "complete");
  EXPECT_EQ(m["manifest_hash"], r.manifest_hash);
  EXPECT_NE(slurp(r.results_path).find(r.manifest_hash), std::string::npos);
  EXPECT_EQ(m["experiments"].size(), 2u);
  EXPECT_EQ(m["experiments"][1]["replicas"], 20);
  EXPECT_TRUE(m["run"].contains("wall_clock_seconds"));
  // The transcript lets anyone re-derive a replica's key.
  const auto key = m["seed_derivation"]["experiments"][1]["replica_0_key"].get<std::string>();
  EXPECT_EQ(std::stoull(key, nullptr, 16), derive_stream_key(9, 1, 0));
}

TEST_F(Experiments, JumpBudgetMakesRunDegraded) {
  const auto r = run(R"({"kind":"persistence","t_grid":[300],"replicas":50,"jump_budget":100})", "d.csv");
  EXPECT_TRUE(r.degraded);
  EXPECT_EQ(r.exit_status(), kExitDegraded);
  const auto m = nlohmann::json::parse(slurp(r.manifest_path));
  EXPECT_EQ(m["status"], "degraded");
  EXPECT_GT(m["aborted_total"].get<int>(), 0);
  const auto t = read_table(r.results_path);
  EXPECT_EQ(t.number(0, "aborted") + t.number(0, "replicas"), 50.0);
}

TEST_F(Experiments, DualityCheckEmitsVerdicts) {
  const auto r = run(R"({"kind":"duality-check","t_grid":[16],"replicas":2000,"forward_replicas":20000,"level_alpha":[0.75]})",
                     "dual.csv");
  const auto t = read_table(r.results_path);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.number(0, "level_alpha"), 1.0);
  EXPECT_EQ(t.number(1, "level_alpha"), 0.75);
  for (const auto& row : t.rows) EXPECT_TRUE(row.back() == "agree" || row.back() == "disagree");
}

TEST_F(Experiments, FitOverPersistenceEmitsBothModels) {
  const auto p = run(R"({"kind":"persistence","t_grid":[20,60,200],"replicas":2000})", "p.csv");
  auto c = parse_config(nlohmann::json::parse(R"({"kind":"fit"})"));
  c.inputs = {p.results_path};
  c.out = path("fit.csv");
  const auto f = run_experiment(c);
  const auto t = read_table(f.results_path);
  EXPECT_EQ(t.schema, "fit");
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][0], "log");
  EXPECT_EQ(t.rows[1][0], "log2");
  EXPECT_EQ(t.number(0, "n_points"), 3.0);
  EXPECT_GT(t.number(1, "slope"), 0.0);
}

TEST_F(Experiments, FitRejectsAmbiguousTailLevels) {
  const auto p = run(R"({"kind":"tail","t_grid":[20,60,200],"level_alpha":[0.6,0.9],"replicas":100,"marks_per_replica":10})",
                     "t.csv");
  auto c = parse_config(nlohmann::json::parse(R"({"kind":"fit"})"));
  c.inputs = {p.results_path};
  c.out = path("fit.csv");
  EXPECT_THROW(run_experiment(c), ConfigError);
  c.level_alpha = {0.9};
  EXPECT_EQ(read_table(run_experiment(c).results_path).rows.size(), 2u);
}

TEST_F(Experiments, JsonFormatReadsBack) {
  auto c = parse_config(nlohmann::json::parse(R"({"kind":"persistence","t_grid":[50],"replicas":100,"format":"json"})"));
  c.out = path("p.json");
  const auto r = run_experiment(c);
  const auto j = nlohmann::json::parse(slurp(r.results_path));
  EXPECT_EQ(j["schema"], "persistence");
  EXPECT_EQ(j["manifest_hash"], r.manifest_hash);
  const auto t = read_table(r.results_path);
  EXPECT_EQ(t.rows, r.table.rows);
}

TEST_F(Experiments, ReportRejectsEmptySet) { EXPECT_THROW(write_report({}, path("r.md")), ConfigError); }

TEST_F(Experiments, ReportListsOffendingColumns) {
  write(path("bad.csv"), "# schema: persistence\nt,rho,p_hat,stderr,replicas,bogus\n1,0.5,0.1,0.01,10,0\n");
  try {
    write_report({path("bad.csv")}, path("r.md"));
    FAIL() << "expected a schema diagnostic";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("missing columns: aborted"), std::string::npos) << msg;
    EXPECT_NE(msg.find("unexpected columns: bogus"), std::string::npos) << msg;
  }
  write(path("odd.csv"), "when,what\n1,2\n");
  EXPECT_THROW(write_report({path("odd.csv")}, path("r.md")), ConfigError);
}

TEST_F(Experiments, ReportKeepsKindsInSeparateSections) {
  const auto p = run(R"({"kind":"persistence","t_grid":[20,60,200],"replicas":500})", "p.csv");
  const auto t = run(R"({"kind":"tail","t_grid":[20,60,200],"level_alpha":[0.6,0.9],"replicas":200,"marks_per_replica":20})",
                     "t.csv");
  const auto r = write_report({p.results_path, t.results_path}, path("out/report.md"));
  const auto& s = r.summary;
  const auto ps = s.find("## 1. persistence");
  const auto ts = s.find("## 2. tail");
  ASSERT_NE(ps, std::string::npos);
  ASSERT_NE(ts, std::string::npos);
  EXPECT_LT(ps, ts);
  EXPECT_NE(s.find("| t | p_hat | stderr | -log p_hat |"), std::string::npos);
  EXPECT_NE(s.find("level_alpha = 0.9"), std::string::npos);
  ASSERT_EQ(r.plot_paths.size(), 3u);  // persistence + one per tail level
  const auto plot = slurp(r.plot_paths[0]);
  EXPECT_NE(plot.find("x,y,yerr\n20,"), std::string::npos);
  EXPECT_TRUE(fs::exists(path("out/report.md")));
}
