#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "metarl/harness.hpp"

using namespace metarl;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("metarl_harness_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

// Three evaluation points per run: valid/test pairs at updates 10, 20, 30.
std::vector<MetricRow> synthetic_run(std::vector<double> valid, std::vector<double> test) {
  std::vector<MetricRow> rows;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    const std::uint64_t u = 10 * (i + 1);
    rows.push_back({u * 80, u, Split::Train, 0.0, 0.0, 1.0, 1.0, 0.0});
    rows.push_back({u * 80, u, Split::Valid, valid[i], 0.0});
    rows.push_back({u * 80, u, Split::Test, test[i], 0.0});
  }
  return rows;
}

ExperimentConfig two_point_config() {
  return parse_experiment(R"({
    "name": "pair",
    "seeds": [0, 1],
    "environment": {"name": "bandit", "arms": 3, "rho": 0.05, "horizon": 20},
    "agent": {"kind": "rnn", "hidden": 8},
    "training": {"learning_rate": [0.001, 0.003], "entropy": 0.01, "critic": 0.1,
                 "budget": 1600, "eval_interval": 10, "eval_episodes": 10}
  })");
}

}  // namespace

TEST(Smooth, ConstantCurveIsUnchanged) {
  const std::vector<double> c(30, 2.5);
  for (double v : smooth(c)) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(Smooth, ImpulseSpreadsOverTheWindow) {
  std::vector<double> c(41, 0.0);
  c[20] = 1.0;
  const auto s = smooth(c);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const bool inside = i >= 15 && i <= 25;
    EXPECT_DOUBLE_EQ(s[i], inside ? 1.0 / 11.0 : 0.0) << i;
  }
}

TEST(Smooth, MatchesTruncatedWindowAverage) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> n;
  for (std::size_t len : {1u, 4u, 11u, 12u, 57u}) {
    std::vector<double> c(len);
    for (auto& v : c) v = n(gen);
    const auto s = smooth(c, 11);
    for (std::size_t i = 0; i < len; ++i) {
      double total = 0.0;
      int count = 0;
      for (int j = static_cast<int>(i) - 5; j <= static_cast<int>(i) + 5; ++j) {
        if (j < 0 || j >= static_cast<int>(len)) continue;
        total += c[j];
        ++count;
      }
      EXPECT_NEAR(s[i], total / count, 1e-12);
    }
  }
  EXPECT_THROW(smooth(std::vector<double>{1.0}, 0), std::invalid_argument);
}

TEST(Report, CellFormat) {
  EXPECT_EQ(format_cell(64.666, 1.234), "64.67(1.23)");
  EXPECT_EQ(format_cell(-0.5, 0.0), "-0.50(0.00)");
}

TEST(Report, SummaryUsesTestAtBestValidation) {
  const auto r = summarize_run(0, 0, synthetic_run({1.0, 3.0, 3.0}, {5.0, 7.0, 9.0}));
  ASSERT_TRUE(r.has_evaluation);
  EXPECT_EQ(r.best_valid, 3.0);
  EXPECT_EQ(r.best_updates, 20u);  // earliest maximum
  EXPECT_EQ(r.test_at_best, 7.0);

  const auto empty = summarize_run(0, 0, {});
  EXPECT_FALSE(empty.has_evaluation);
}

TEST(Report, SelectionAveragesSeedsAndIsOrderInvariant) {
  auto config = two_point_config();
  config.seeds = {0, 1, 2};
  // point 0: best valid {4, 4, 4}; point 1: {6, 2, 3} -> mean 3.67
  std::vector<RunRecord> runs{
      summarize_run(0, 0, synthetic_run({4, 1, 1}, {10, 0, 0})),
      summarize_run(0, 1, synthetic_run({1, 4, 1}, {0, 12, 0})),
      summarize_run(0, 2, synthetic_run({1, 1, 4}, {0, 0, 14})),
      summarize_run(1, 0, synthetic_run({6, 1, 1}, {50, 0, 0})),
      summarize_run(1, 1, synthetic_run({2, 1, 1}, {50, 0, 0})),
      summarize_run(1, 2, synthetic_run({3, 1, 1}, {50, 0, 0})),
  };
  const auto base = select_configuration(config, runs);
  ASSERT_TRUE(base.selected);
  EXPECT_EQ(*base.selected, 0u);
  EXPECT_DOUBLE_EQ(base.scores[0].mean_test, 12.0);
  EXPECT_NEAR(base.scores[0].std_test, std::sqrt(8.0 / 3.0), 1e-12);
  EXPECT_EQ(base.cell(), format_cell(12.0, std::sqrt(8.0 / 3.0)));

  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(runs.begin(), runs.end(), gen);
    const auto r = select_configuration(config, runs);
    EXPECT_EQ(*r.selected, 0u);
    EXPECT_EQ(r.cell(), base.cell());
  }
}

TEST(Report, TiesGoToTheSmallestLabel) {
  auto config = two_point_config();
  config.seeds = {0};
  std::swap(config.points[0], config.points[1]);  // larger label first
  std::vector<RunRecord> runs{summarize_run(0, 0, synthetic_run({5}, {1})), summarize_run(1, 0, synthetic_run({5}, {2}))};
  const auto r = select_configuration(config, runs);
  EXPECT_EQ(r.scores[*r.selected].label, "learning_rate=0.001");
}

TEST(Report, PointsWithoutRunsAreExcluded) {
  auto config = two_point_config();
  const auto r = select_configuration(config, {summarize_run(1, 0, synthetic_run({1}, {2}))});
  EXPECT_EQ(*r.selected, 1u);
  EXPECT_EQ(r.scores[0].completed, 0u);
  EXPECT_FALSE(r.warnings.empty());
  EXPECT_FALSE(select_configuration(config, {}).selected);
  EXPECT_EQ(select_configuration(config, {}).cell(), "n/a");
}

TEST(Report, CurveIsSeedMeanOfSmoothedCurves) {
  auto config = two_point_config();
  config.seeds = {0, 1, 2};
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<std::vector<double>> tests(3);
  std::vector<RunRecord> runs;
  for (std::uint64_t s = 0; s < 3; ++s) {
    std::vector<double> valid(25);
    tests[s].resize(25);
    for (auto& v : valid) v = u(gen);
    for (auto& v : tests[s]) v = u(gen);
    runs.push_back(summarize_run(0, s, synthetic_run(valid, tests[s])));
  }
  const auto report = select_configuration(config, runs);
  const auto curve = selected_test_curve(report);
  ASSERT_EQ(curve.mean.size(), 25u);
  std::vector<std::vector<double>> sm;
  for (const auto& t : tests) sm.push_back(smooth(t));
  for (std::size_t i = 0; i < 25; ++i) {
    const double m = (sm[0][i] + sm[1][i] + sm[2][i]) / 3.0;
    const double var = ((sm[0][i] - m) * (sm[0][i] - m) + (sm[1][i] - m) * (sm[1][i] - m) +
                        (sm[2][i] - m) * (sm[2][i] - m)) /
                       3.0;
    EXPECT_NEAR(curve.mean[i], m, 1e-12);
    EXPECT_NEAR(curve.std[i], std::sqrt(var), 1e-12);
    EXPECT_EQ(curve.env_steps[i], 800.0 * (i + 1));
  }
}

TEST(Config, DefaultGridsFollowTheAgent) {
  auto import = parse_experiment(R"({"agent": {"kind": "import"}})");
  EXPECT_EQ(import.points.size(), 2u * 3 * 3 * 4 * 2);
  EXPECT_EQ(import.seeds, (std::vector<std::uint64_t>{0, 1, 2}));
  EXPECT_EQ(import.name, "sweep");
  EXPECT_EQ(import.points[0].config.budget, 100000);

  EXPECT_EQ(parse_experiment(R"({"agent": {"kind": "rnn"}})").points.size(), 18u);
  EXPECT_EQ(parse_experiment(R"({"agent": {"kind": "ti"}})").points.size(), 72u);
  EXPECT_EQ(parse_experiment(R"({"agent": {"kind": "ts"}})").points.size(), 36u);
  EXPECT_EQ(parse_experiment(R"({"agent": {"kind": "ucb"}})").points.size(), 1u);

  auto b0 = parse_experiment(R"({"agent": {"kind": "import_b0"}})");
  EXPECT_EQ(b0.method, "import_b0");
  EXPECT_EQ(b0.points.size(), 36u);
  for (const auto& p : b0.points) {
    EXPECT_EQ(p.config.weights.beta, 0.0);
    EXPECT_EQ(p.config.agent.kind, AgentKind::Import);
  }
}

TEST(Config, SinglePointSingleSeed) {
  auto c = parse_experiment(R"({
    "name": "one", "seeds": [7],
    "environment": {"name": "maze2d", "scenario": "B"},
    "agent": {"kind": "rnn"},
    "training": {"learning_rate": 0.003, "entropy": 0.1, "critic": 1, "l_steps": "full",
                 "reinforce": true, "budget": 2e6}
  })");
  ASSERT_EQ(c.points.size(), 1u);
  EXPECT_EQ(c.points[0].label, "default");
  const auto& t = c.points[0].config;
  EXPECT_EQ(t.env.name, "maze2d");
  EXPECT_EQ(t.env.scenario, 'B');
  EXPECT_EQ(t.weights.learning_rate, 0.003);
  EXPECT_EQ(t.weights.horizon, kFullEpisode);
  EXPECT_TRUE(t.reinforce);
  EXPECT_EQ(t.budget, 2000000);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{7}));
}

TEST(Config, LabelsNameTheGridAxes) {
  auto c = two_point_config();
  ASSERT_EQ(c.points.size(), 2u);
  EXPECT_EQ(c.points[0].label, "learning_rate=0.001");
  EXPECT_EQ(c.points[1].label, "learning_rate=0.003");
  EXPECT_EQ(c.points[1].config.weights.learning_rate, 0.003);
}

TEST(Config, RejectsMalformedDocuments) {
  EXPECT_THROW(parse_experiment("{"), std::invalid_argument);
  EXPECT_THROW(parse_experiment("[]"), std::invalid_argument);
  EXPECT_THROW(parse_experiment(R"({"agent": {}})"), std::invalid_argument);
  EXPECT_THROW(parse_experiment(R"({"agent": {"kind": "rnn"}, "extra": 1})"), std::invalid_argument);
  EXPECT_THROW(parse_experiment(R"({"agent": {"kind": "rnn", "colour": 1}})"), std::invalid_argument);
  EXPECT_THROW(parse_experiment(R"({"agent": {"kind": "rnn"}, "training": {"lr": 1}})"), std::invalid_argument);
  EXPECT_THROW(parse_experiment(R"({"agent": {"kind": ["rnn", "ti"]}})"), std::invalid_argument);
  EXPECT_THROW(parse_experiment(R"({"agent": {"kind": "rnn"}, "training": {"entropy": []}})"), std::invalid_argument);
  EXPECT_THROW(parse_experiment(R"({"agent": {"kind": "rnn"}, "training": {"entropy": "big"}})"),
               std::invalid_argument);
  EXPECT_THROW(parse_experiment(R"({"agent": {"kind": "import_b0"}, "training": {"beta": 0.1}})"),
               std::invalid_argument);
  EXPECT_THROW(parse_experiment(R"({"name": "../x", "agent": {"kind": "rnn"}})"), std::invalid_argument);
  EXPECT_ANY_THROW(parse_experiment(R"({"agent": {"kind": "dqn"}})"));
}

TEST(Config, OverridesReachEveryPoint) {
  auto c = two_point_config();
  apply_overrides(c, {.seed = 4, .budget = 800, .workers = 2});
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{4}));
  for (const auto& p : c.points) {
    EXPECT_EQ(p.config.budget, 800);
    EXPECT_EQ(p.config.workers, 2u);
  }
  const auto reparsed = parse_experiment(c.source);
  EXPECT_EQ(reparsed.seeds, c.seeds);
  EXPECT_EQ(reparsed.points[0].config.budget, 800);
}

TEST(Config, RunConfigRoundTrips) {
  auto c = two_point_config().points[1].config;
  c.seed = 11;
  c.weights.horizon = kFullEpisode;
  c.agent.belief = BeliefFamily::Gaussian;
  const auto text = train_config_json(c, "x");
  const auto back = train_config_from_json(text);
  EXPECT_EQ(train_config_json(back, "x"), text);
  EXPECT_EQ(back.seed, 11u);
  EXPECT_EQ(back.weights.horizon, kFullEpisode);
}

TEST(Config, OutputRootFollowsEnvironment) {
  ::setenv("METARL_OUTPUT_ROOT", "/tmp/somewhere", 1);
  EXPECT_EQ(output_root(), std::filesystem::path("/tmp/somewhere"));
  ::unsetenv("METARL_OUTPUT_ROOT");
  EXPECT_EQ(output_root(), std::filesystem::path("runs"));
}

TEST(Sweep, RepeatedInvocationsAgreeAndReuseRuns) {
  const auto config = two_point_config();
  const auto root_a = fresh_dir("sweep_a"), root_b = fresh_dir("sweep_b");
  const auto a = run_sweep(config, {root_a, 1, {}});
  const auto b = run_sweep(config, {root_b, 2, {}});
  ASSERT_TRUE(a.selected);
  EXPECT_EQ(a.cell(), b.cell());
  EXPECT_EQ(*a.selected, *b.selected);
  for (std::size_t p = 0; p < 2; ++p) {
    for (std::uint64_t s : {0u, 1u}) {
      EXPECT_EQ(slurp(run_directory(root_a, config, p, s) / "metrics.csv"),
                slurp(run_directory(root_b, config, p, s) / "metrics.csv"));
    }
  }

  std::vector<std::string> log;
  const auto again = run_sweep(config, {root_a, 1, [&](const std::string& l) { log.push_back(l); }});
  EXPECT_EQ(again.cell(), a.cell());
  ASSERT_EQ(log.size(), 4u);
  for (const auto& l : log) EXPECT_EQ(l.rfind("reusing", 0), 0u) << l;

  const auto loaded = load_sweep(root_a / "pair");
  EXPECT_EQ(loaded.cell(), a.cell());
  EXPECT_TRUE(loaded.warnings.empty());

  const auto out = root_a / "report";
  write_report({loaded}, out);
  EXPECT_NE(slurp(out / "results.csv").find(a.cell()), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(out / "results.txt"));
  EXPECT_TRUE(std::filesystem::exists(out / "scores_pair.csv"));
  EXPECT_NE(slurp(out / "curves" / "pair.csv").find("env_steps,mean,std"), std::string::npos);
}

TEST(Sweep, RefusesToMixConfigurations) {
  auto config = two_point_config();
  config.seeds = {0};
  for (auto& p : config.points) p.config.budget = 800;
  const auto root = fresh_dir("mix");
  run_sweep(config, {root, 1, {}});
  for (auto& p : config.points) p.config.weights.entropy = 0.5;
  EXPECT_THROW(run_sweep(config, {root, 1, {}}), std::runtime_error);
}

TEST(Sweep, UnfinishedRunsAreReportedNotScored) {
  auto config = two_point_config();
  apply_overrides(config, {.seed = 0, .budget = 800, .workers = {}});
  const auto root = fresh_dir("partial");
  run_sweep(config, {root, 1, {}});
  std::filesystem::remove(run_directory(root, config, 1, 0) / "checkpoints" / "latest.json");
  const auto loaded = load_sweep(root / "pair");
  EXPECT_EQ(loaded.scores[1].completed, 0u);
  EXPECT_EQ(*loaded.selected, 0u);
  EXPECT_FALSE(loaded.warnings.empty());
}

TEST(Checkpoint, EvaluatesSavedParameters) {
  auto config = two_point_config();
  config.seeds = {0};
  const auto root = fresh_dir("ckpt");
  run_sweep(config, {root, 1, {}});
  const auto dir = run_directory(root, config, 0, 0);
  const auto env = config.points[0].config.env;
  const auto a = evaluate_checkpoint(dir / "checkpoints" / "best.ckpt", env, Split::Test, 20, 3);
  const auto b = evaluate_checkpoint(dir / "checkpoints" / "best.ckpt", env, Split::Test, 20, 3);
  EXPECT_EQ(a.returns, b.returns);
  EXPECT_EQ(a.returns.size(), 20u);
  EXPECT_EQ(checkpoint_config(dir / "checkpoints" / "latest.ckpt").agent.kind, AgentKind::Rnn);

  EXPECT_THROW(evaluate_checkpoint(dir / "checkpoints" / "missing.ckpt", env, Split::Test, 5, 0), std::runtime_error);
  EnvSpec wider = env;
  wider.arms = 5;
  EXPECT_THROW(evaluate_checkpoint(dir / "checkpoints" / "best.ckpt", wider, Split::Test, 5, 0), std::runtime_error);
}
