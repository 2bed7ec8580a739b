// Command-line front end: train, sweep, eval and report.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "metarl/harness.hpp"

using namespace metarl;
namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> budget;
  std::optional<std::size_t> workers;
  std::size_t jobs = 1;
};

void add_overrides(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--seed", o.seed, "Run only this seed");
  cmd->add_option("--budget", o.budget, "Environment-step budget per run")->check(CLI::PositiveNumber);
  cmd->add_option("--workers", o.workers, "Collection workers per run")->check(CLI::PositiveNumber);
  cmd->add_option("--jobs", o.jobs, "Runs trained concurrently")->check(CLI::PositiveNumber);
}

ExperimentConfig load(const std::string& path, const CommonOptions& o) {
  auto config = load_experiment(path);
  apply_overrides(config, {o.seed, o.budget, o.workers});
  return config;
}

void log_line(const std::string& line) { std::cerr << line << std::endl; }

void print_report(const SweepReport& r) {
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
  if (!r.selected) {
    std::cout << r.name << ": no finished runs\n";
    return;
  }
  const auto& s = r.scores[*r.selected];
  std::cout << r.name << " (" << r.method << "): " << s.label << "  valid " << s.mean_best_valid << "  test "
            << r.cell() << '\n';
}

int train(const std::string& path, const CommonOptions& o) {
  const auto config = load(path, o);
  if (config.points.size() != 1) {
    throw std::invalid_argument(path + " defines " + std::to_string(config.points.size()) +
                                " configurations; fix every hyperparameter or use 'sweep'");
  }
  const auto report = run_sweep(config, {output_root(), o.jobs, log_line});
  for (const auto& run : report.runs) {
    std::printf("seed %llu: best valid %.4f at update %llu, test %.4f  (%s)\n",
                static_cast<unsigned long long>(run.seed), run.best_valid,
                static_cast<unsigned long long>(run.best_updates), run.test_at_best,
                run_directory(output_root(), config, run.point, run.seed).c_str());
  }
  print_report(report);
  return 0;
}

int sweep(const std::string& path, const CommonOptions& o) {
  const auto config = load(path, o);
  log_line(config.name + ": " + std::to_string(config.points.size()) + " configurations x " +
           std::to_string(config.seeds.size()) + " seeds");
  const auto report = run_sweep(config, {output_root(), o.jobs, log_line});
  const fs::path out = output_root() / config.name / "report";
  write_report({report}, out);
  print_report(report);
  std::cout << "report written to " << out.string() << '\n';
  return 0;
}

int eval(const std::string& checkpoint, const std::string& env_name, const std::string& split_name,
         std::size_t episodes, std::optional<std::uint64_t> seed) {
  const TrainConfig cfg = checkpoint_config(checkpoint);
  EnvSpec env;
  if (env_name == cfg.env.name) {
    env = cfg.env;
  } else {
    env.name = env_name;
  }
  const Split split = split_from_string(split_name);
  const std::uint64_t s = seed ? *seed : evaluation_seed(env, split);
  const auto result = evaluate_checkpoint(checkpoint, env, split, episodes, s);
  std::printf("%s %s: mean %.4f  std %.4f  over %zu episodes\n", env.name.c_str(), split_name.c_str(), result.mean,
              result.std, result.returns.size());
  return 0;
}

int report(const std::vector<std::string>& dirs, std::string out) {
  std::vector<SweepReport> reports;
  for (const auto& d : dirs) {
    reports.push_back(load_sweep(d));
    print_report(reports.back());
  }
  if (out.empty()) out = dirs.size() == 1 ? (fs::path(dirs.front()) / "report").string() : "report";
  write_report(reports, out);
  std::ifstream table(fs::path(out) / "results.txt");
  std::cout << '\n' << table.rdbuf();
  std::cout << "report written to " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-reinforcement-learning experiments. Run directories go under $METARL_OUTPUT_ROOT (default ./runs)."};
  app.require_subcommand(1);

  CommonOptions train_opts, sweep_opts;
  std::string train_config, sweep_config;
  auto* train_cmd = app.add_subcommand("train", "Train one configuration (every seed it lists)");
  train_cmd->add_option("config", train_config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  add_overrides(train_cmd, train_opts);

  auto* sweep_cmd = app.add_subcommand("sweep", "Train a hyperparameter grid and select the best configuration");
  sweep_cmd->add_option("config", sweep_config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  add_overrides(sweep_cmd, sweep_opts);

  std::string checkpoint, env_name, split_name;
  std::size_t episodes = 100;
  std::optional<std::uint64_t> eval_seed;
  auto* eval_cmd = app.add_subcommand("eval", "Score a saved checkpoint");
  eval_cmd->add_option("checkpoint", checkpoint, "A .ckpt file inside a run directory")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("env", env_name, "Environment name")->required();
  eval_cmd->add_option("split", split_name, "train, valid or test")->required();
  eval_cmd->add_option("--episodes", episodes, "Evaluation episodes")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", eval_seed, "Episode seed (default: the shared evaluation seed)");

  std::vector<std::string> sweep_dirs;
  std::string out_dir;
  auto* report_cmd = app.add_subcommand("report", "Summarize finished sweeps");
  report_cmd->add_option("sweep-dir", sweep_dirs, "Sweep directories")->required()->check(CLI::ExistingDirectory);
  report_cmd->add_option("--out", out_dir, "Output directory");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train_cmd) return train(train_config, train_opts);
    if (*sweep_cmd) return sweep(sweep_config, sweep_opts);
    if (*eval_cmd) return eval(checkpoint, env_name, split_name, episodes, eval_seed);
    if (*report_cmd) return report(sweep_dirs, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
