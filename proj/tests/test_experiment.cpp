#include "fedmm/experiment.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fedmm {
namespace {

namespace fs = std::filesystem;

json tiny_config(const fs::path& out) {
  auto j = json::parse(R"({
    "version": 1,
    "dataset": {"kind": "synthetic", "n_samples": 2000},
    "partition": {"setting": "ESG", "num_clients": 4},
    "algorithm": {"name": "fedminmax", "rounds": 20, "hidden": [8]},
    "evaluation": {"test_fraction": 0.25, "seeds": [0, 1]}
  })");
  j["output_dir"] = out.string();
  return j;
}

std::string error_of(const json& j) {
  try {
    parse_config(j);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return {};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Workdir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("fedmm_exp_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST(Config, DefaultsAndOverrides) {
  auto cfg = parse_config(tiny_config("o"));
  EXPECT_EQ(cfg.algorithm.algorithm, Algorithm::FedMinMax);
  EXPECT_EQ(cfg.algorithm.rounds, 20u);
  EXPECT_DOUBLE_EQ(cfg.algorithm.lr_model, 0.1);
  EXPECT_EQ(cfg.algorithm.loss, LossKind::BrierScore);
  EXPECT_EQ(cfg.hidden, std::vector<std::size_t>{8});
  Overrides o;
  o.seed = 9;
  o.algorithm = "afl";
  o.setting = "SSG";
  o.rounds = 3;
  o.loss = "cross_entropy";
  o.out = "elsewhere";
  apply_overrides(cfg, o);
  EXPECT_EQ(cfg.evaluation.seeds, std::vector<std::uint64_t>{9});
  EXPECT_EQ(cfg.algorithm.algorithm, Algorithm::AFL);
  EXPECT_EQ(cfg.partition.setting, Setting::SSG);
  EXPECT_EQ(cfg.algorithm.rounds, 3u);
  EXPECT_EQ(cfg.algorithm.loss, LossKind::CrossEntropy);
  EXPECT_EQ(cfg.output_dir, "elsewhere");
  Overrides bad;
  bad.algorithm = "fedprox";
  EXPECT_THROW(apply_overrides(cfg, bad), ValidationError);
}

TEST(Config, ErrorsNameTheKey) {
  auto j = tiny_config("o");
  j["algorithm"]["learning_rate"] = 0.1;
  EXPECT_NE(error_of(j).find("algorithm.learning_rate"), std::string::npos) << error_of(j);

  j = tiny_config("o");
  j["partition"]["num_clients"] = "forty";
  EXPECT_NE(error_of(j).find("partition.num_clients"), std::string::npos) << error_of(j);

  j = tiny_config("o");
  j["version"] = 2;
  EXPECT_NE(error_of(j).find("version"), std::string::npos);

  j = tiny_config("o");
  j.erase("algorithm");
  EXPECT_NE(error_of(j).find("algorithm"), std::string::npos);

  j = tiny_config("o");
  j["algorithm"]["rounds"] = 0;
  EXPECT_NE(error_of(j).find("algorithm.rounds"), std::string::npos);

  j = tiny_config("o");
  j["evaluation"]["test_fraction"] = 1.5;
  EXPECT_NE(error_of(j).find("evaluation.test_fraction"), std::string::npos);

  j = tiny_config("o");
  j["dataset"]["features"] = json::array();
  EXPECT_NE(error_of(j).find("dataset.features"), std::string::npos);

  j = tiny_config("o");
  j["algorithm"]["name"] = "qffedavg";
  EXPECT_NE(error_of(j).find("algorithm.name"), std::string::npos);
}

TEST(Config, BundledConfigsParse) {
  std::size_t n = 0;
  for (const auto& entry : fs::directory_iterator(fs::path(FEDMM_SOURCE_DIR) / "configs")) {
    if (entry.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_config(entry.path())) << entry.path();
    ++n;
  }
  EXPECT_GE(n, 10u);
  const auto esg = load_config(fs::path(FEDMM_SOURCE_DIR) / "configs/synthetic_esg_fedminmax.json");
  EXPECT_EQ(esg.partition.num_clients, 40u);
  EXPECT_EQ(esg.algorithm.rounds, 2000u);
  EXPECT_EQ(esg.dataset.synthetic.n_samples, 100000u);
  EXPECT_THROW(load_config(fs::path(FEDMM_SOURCE_DIR) / "tests/data/bad_config.json"), ValidationError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), IoError);
}

TEST(Config, EchoRoundTrips) {
  const auto cfg = parse_config(tiny_config("o"));
  const auto again = parse_config(config_echo(cfg));
  EXPECT_EQ(config_echo(again).dump(), config_echo(cfg).dump());
}

TEST_F(Workdir, RunWritesReportsAndIsDeterministic) {
  const auto cfg = parse_config(tiny_config(dir_ / "a"));
  const auto res = run_experiment(cfg);
  ASSERT_EQ(res.seeds.size(), 2u);
  for (auto s : {0, 1}) {
    const auto seed_dir = dir_ / "a" / ("seed_" + std::to_string(s));
    EXPECT_TRUE(fs::exists(seed_dir / "metrics.csv"));
    EXPECT_TRUE(fs::exists(seed_dir / "summary.json"));
  }
  const auto agg = json::parse(slurp(dir_ / "a" / "aggregate.json"));
  EXPECT_NEAR(agg["test_worst_risk"]["mean"].get<double>(), 0.5 * (res.seeds[0].test.worst_risk + res.seeds[1].test.worst_risk), 1e-15);

  auto cfg_b = cfg;
  cfg_b.output_dir = (dir_ / "b").string();
  run_experiment(cfg_b);
  for (auto s : {"seed_0", "seed_1"})
    EXPECT_EQ(slurp(dir_ / "a" / s / "metrics.csv"), slurp(dir_ / "b" / s / "metrics.csv"));
  EXPECT_NE(slurp(dir_ / "a" / "seed_0" / "metrics.csv"), slurp(dir_ / "a" / "seed_1" / "metrics.csv"));

  const auto summary = json::parse(slurp(dir_ / "a" / "seed_0" / "summary.json"));
  EXPECT_EQ(summary["config"]["evaluation"]["seeds"], json::array({0}));
  EXPECT_EQ(summary["algorithm"], "fedminmax");
}

TEST_F(Workdir, CsvPipeline) {
  auto j = json::parse(slurp(fs::path(FEDMM_SOURCE_DIR) / "configs/csv_example.json"));
  j["dataset"]["path"] = (fs::path(FEDMM_SOURCE_DIR) / "data/toy_tabular.csv").string();
  j["algorithm"]["rounds"] = 10;
  j["output_dir"] = (dir_ / "csv").string();
  const auto res = run_experiment(parse_config(j));
  ASSERT_EQ(res.seeds.size(), 1u);
  EXPECT_EQ(res.seeds[0].test.risk.size(), 2u);
  EXPECT_EQ(res.seeds[0].trace.initial_params.spec.input_dim(), 5u);  // 2 numeric + 3 sectors
}

TEST_F(Workdir, CompareMatchesAndChecksRates) {
  auto j = tiny_config(dir_);
  j["algorithm"]["rounds"] = 15;
  auto cfg = parse_config(j);
  const auto res = run_compare(cfg);
  EXPECT_LE(res.comparison.max_param_diff, 1e-9);
  EXPECT_LE(res.comparison.max_weight_diff, 1e-12);
  EXPECT_TRUE(fs::exists(dir_ / "compare.csv"));
  cfg.compare.lr_model = 0.2;
  EXPECT_THROW(run_compare(cfg), ValidationError);
}

TEST_F(Workdir, FeasibilityUnderSsgAndEsg) {
  auto j = tiny_config(dir_ / "ssg");
  j["partition"]["setting"] = "SSG";
  j["algorithm"]["rounds"] = 60;
  const auto ssg = run_feasibility(parse_config(j));
  EXPECT_TRUE(ssg.report.feasible);
  EXPECT_TRUE(fs::exists(dir_ / "ssg" / "feasibility.json"));

  j = tiny_config(dir_ / "esg");
  j["algorithm"]["rounds"] = 200;
  j["dataset"]["n_samples"] = 8000;
  const auto esg = run_feasibility(parse_config(j));
  // mu* has moved well past every client's ~50/50 prior.
  EXPECT_GT(esg.fedminmax_weights[0], 0.9);
  EXPECT_FALSE(esg.report.feasible);
  EXPECT_GT(esg.report.residual, 0.1);
}

}  // namespace
}  // namespace fedmm
