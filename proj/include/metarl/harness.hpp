#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metarl/training.hpp"

namespace metarl {

/// One fully specified training configuration of a sweep.
struct GridPoint {
  std::string label;  // "key=value" pairs of the grid axes, or "default"
  TrainConfig config;
};

/// A sweep as read from a JSON document with "environment", "agent" and
/// "training" sections. A list in any section is a grid axis; learned agents
/// get the default grids for the hyperparameters they use unless the
/// document fixes them.
struct ExperimentConfig {
  std::string name;
  std::string method;  // agent name as written, e.g. "import_b0"
  std::vector<GridPoint> points;
  std::vector<std::uint64_t> seeds;
  std::string source;  // the document, normalized
};

ExperimentConfig parse_experiment(std::string_view json_text);
ExperimentConfig load_experiment(const std::filesystem::path& path);

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> budget;
  std::optional<std::size_t> workers;
};
void apply_overrides(ExperimentConfig& config, const Overrides& overrides);

/// Serialized form of a single run's configuration (run_dir/config.json).
std::string train_config_json(const TrainConfig& config, std::string_view label = "");
TrainConfig train_config_from_json(std::string_view json_text);

struct RunRecord {
  std::size_t point = 0;
  std::uint64_t seed = 0;
  std::vector<MetricRow> metrics;
  double best_valid = 0.0;
  double test_at_best = 0.0;
  std::uint64_t best_updates = 0;
  bool has_evaluation = false;
};

/// Best validation score of a run and the test score measured at that same
/// evaluation point (the earliest one on ties).
RunRecord summarize_run(std::size_t point, std::uint64_t seed, std::vector<MetricRow> metrics);

struct PointScore {
  std::string label;
  std::size_t completed = 0;  // seeds with at least one evaluation
  double mean_best_valid = 0.0;
  double mean_test = 0.0;
  double std_test = 0.0;
};

struct SweepReport {
  std::string name;
  std::string method;
  std::vector<PointScore> scores;
  std::vector<RunRecord> runs;
  std::optional<std::size_t> selected;
  std::vector<std::string> warnings;

  /// Table cell of the selected configuration.
  std::string cell() const;
};

/// Picks the point with the highest seed-averaged best validation score.
/// Ties go to the smallest label, so the choice does not depend on the order
/// of points or seeds.
SweepReport select_configuration(const ExperimentConfig& config, std::vector<RunRecord> runs);

/// "mean(std)" with two decimals.
std::string format_cell(double mean, double std);

/// Centered moving average; windows are truncated at the edges.
std::vector<double> smooth(std::span<const double> curve, std::size_t window = 11);

struct Curve {
  std::vector<double> env_steps;
  std::vector<double> mean;
  std::vector<double> std;
};
/// Test curve of the selected configuration: each seed's curve is smoothed,
/// then the seeds are averaged point by point (truncated to the shortest).
Curve selected_test_curve(const SweepReport& report, std::size_t window = 11);

/// Root for all run directories: $METARL_OUTPUT_ROOT, else ./runs.
std::filesystem::path output_root();
std::filesystem::path run_directory(const std::filesystem::path& root, const ExperimentConfig& config,
                                    std::size_t point, std::uint64_t seed);

struct SweepOptions {
  std::filesystem::path root;
  std::size_t jobs = 1;  // runs trained concurrently
  std::function<void(const std::string&)> log;
};

/// Trains every (point, seed) under root/name, resuming or skipping runs
/// already on disk, and assembles the report.
SweepReport run_sweep(const ExperimentConfig& config, const SweepOptions& options);

/// Rebuilds a report from the artifacts of a sweep directory; only finished
/// runs count.
SweepReport load_sweep(const std::filesystem::path& sweep_dir);

/// Writes results.csv, results.txt, scores_<name>.csv and
/// curves/<name>.csv into `out_dir`.
void write_report(const std::vector<SweepReport>& reports, const std::filesystem::path& out_dir);

/// Loads a checkpoint written by train_loop (its run directory supplies the
/// agent configuration) and scores it.
EvalResult evaluate_checkpoint(const std::filesystem::path& checkpoint, const EnvSpec& env, Split split,
                               std::size_t episodes, std::uint64_t seed);

/// Run configuration stored next to a checkpoint (run_dir/config.json).
TrainConfig checkpoint_config(const std::filesystem::path& checkpoint);

}  // namespace metarl
