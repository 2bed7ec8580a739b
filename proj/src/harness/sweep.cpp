#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "metarl/checkpoint.hpp"
#include "metarl/harness.hpp"

namespace metarl {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double total = 0.0;
  for (double x : xs) total += x;
  const double mean = total / static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / static_cast<double>(xs.size()))};
}

std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Settings that may change between invocations without invalidating a run.
json comparable(std::string_view text) {
  json j = json::parse(text);
  if (j.contains("training")) {
    j["training"].erase("budget");
    j["training"].erase("workers");
  }
  return j;
}

bool run_finished(const fs::path& dir, std::int64_t budget) {
  const fs::path state = dir / "checkpoints" / "latest.json";
  if (!fs::exists(state) || !fs::exists(dir / "metrics.csv")) return false;
  const json j = json::parse(read_text(state));
  return j.value("complete", false) && j.value("budget", std::int64_t{0}) == budget;
}

fs::path run_dir_of(const fs::path& checkpoint) { return checkpoint.parent_path().parent_path(); }

}  // namespace

RunRecord summarize_run(std::size_t point, std::uint64_t seed, std::vector<MetricRow> metrics) {
  RunRecord r;
  r.point = point;
  r.seed = seed;
  r.metrics = std::move(metrics);
  for (const auto& row : r.metrics) {
    if (row.split != Split::Valid) continue;
    if (!r.has_evaluation || row.mean_return > r.best_valid) {
      r.best_valid = row.mean_return;
      r.best_updates = row.updates;
      r.has_evaluation = true;
    }
  }
  if (!r.has_evaluation) return r;
  bool found = false;
  for (const auto& row : r.metrics) {
    if (row.split == Split::Test && row.updates == r.best_updates) {
      r.test_at_best = row.mean_return;
      found = true;
      break;
    }
  }
  if (!found) throw std::runtime_error("run has no test evaluation at update " + std::to_string(r.best_updates));
  return r;
}

std::string format_cell(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f(%.2f)", mean, std);
  return buf;
}

std::string SweepReport::cell() const {
  if (!selected) return "n/a";
  return format_cell(scores[*selected].mean_test, scores[*selected].std_test);
}

SweepReport select_configuration(const ExperimentConfig& config, std::vector<RunRecord> runs) {
  SweepReport report;
  report.name = config.name;
  report.method = config.method;
  std::sort(runs.begin(), runs.end(),
            [](const RunRecord& a, const RunRecord& b) { return std::tie(a.point, a.seed) < std::tie(b.point, b.seed); });

  for (std::size_t p = 0; p < config.points.size(); ++p) {
    PointScore score;
    score.label = config.points[p].label;
    std::vector<double> valid, test;
    for (const auto& run : runs) {
      if (run.point != p || !run.has_evaluation) continue;
      valid.push_back(run.best_valid);
      test.push_back(run.test_at_best);
    }
    score.completed = valid.size();
    score.mean_best_valid = mean_std(valid).first;
    std::tie(score.mean_test, score.std_test) = mean_std(test);
    if (score.completed == 0) {
      report.warnings.push_back("configuration " + score.label + " has no finished run and is excluded");
    } else if (score.completed < config.seeds.size()) {
      report.warnings.push_back("configuration " + score.label + " finished " + std::to_string(score.completed) +
                                " of " + std::to_string(config.seeds.size()) + " seeds");
    }
    report.scores.push_back(std::move(score));
  }

  for (std::size_t p = 0; p < report.scores.size(); ++p) {
    const auto& s = report.scores[p];
    if (s.completed == 0) continue;
    if (!report.selected) {
      report.selected = p;
      continue;
    }
    const auto& best = report.scores[*report.selected];
    if (s.mean_best_valid > best.mean_best_valid ||
        (s.mean_best_valid == best.mean_best_valid && s.label < best.label)) {
      report.selected = p;
    }
  }
  report.runs = std::move(runs);
  return report;
}

std::vector<double> smooth(std::span<const double> curve, std::size_t window) {
  if (window == 0) throw std::invalid_argument("smoothing window must be positive");
  const std::size_t half = window / 2;
  std::vector<double> out(curve.size());
  for (std::size_t i = 0; i < curve.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(curve.size(), i + half + 1);
    double total = 0.0;
    for (std::size_t j = lo; j < hi; ++j) total += curve[j];
    out[i] = total / static_cast<double>(hi - lo);
  }
  return out;
}

Curve selected_test_curve(const SweepReport& report, std::size_t window) {
  Curve out;
  if (!report.selected) return out;
  std::vector<std::vector<double>> curves;
  std::vector<double> steps;
  for (const auto& run : report.runs) {
    if (run.point != *report.selected || !run.has_evaluation) continue;
    std::vector<double> values, run_steps;
    for (const auto& row : run.metrics) {
      if (row.split != Split::Test) continue;
      values.push_back(row.mean_return);
      run_steps.push_back(static_cast<double>(row.env_steps));
    }
    curves.push_back(smooth(values, window));
    if (steps.empty() || run_steps.size() < steps.size()) steps = run_steps;
  }
  if (curves.empty()) return out;
  std::size_t length = curves.front().size();
  for (const auto& c : curves) length = std::min(length, c.size());
  for (std::size_t i = 0; i < length; ++i) {
    std::vector<double> column;
    for (const auto& c : curves) column.push_back(c[i]);
    const auto [m, s] = mean_std(column);
    out.env_steps.push_back(steps[i]);
    out.mean.push_back(m);
    out.std.push_back(s);
  }
  return out;
}

SweepReport run_sweep(const ExperimentConfig& config, const SweepOptions& options) {
  const fs::path sweep_dir = options.root / config.name;
  fs::create_directories(sweep_dir);
  write_text(sweep_dir / "sweep.json", config.source);

  struct Job {
    std::size_t point;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < config.points.size(); ++p) {
    for (auto seed : config.seeds) jobs.push_back({p, seed});
  }

  std::mutex log_mutex;
  auto log = [&](const std::string& line) {
    if (!options.log) return;
    std::lock_guard lock(log_mutex);
    options.log(line);
  };

  std::vector<RunRecord> records(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
      try {
        const auto& job = jobs[j];
        TrainConfig cfg = config.points[job.point].config;
        cfg.seed = job.seed;
        cfg.output_dir = run_directory(options.root, config, job.point, job.seed);
        fs::create_directories(cfg.output_dir);
        const std::string text = train_config_json(cfg, config.points[job.point].label);
        const fs::path config_file = cfg.output_dir / "config.json";
        if (fs::exists(config_file) && comparable(read_text(config_file)) != comparable(text)) {
          throw std::runtime_error(cfg.output_dir.string() + " holds a run with a different configuration");
        }
        write_text(config_file, text);
        const std::string name = config.points[job.point].label + " seed " + std::to_string(job.seed);
        const bool done = run_finished(cfg.output_dir, cfg.budget);
        log((done ? "reusing " : "training ") + name);
        auto result = train_loop(cfg);
        records[j] = summarize_run(job.point, job.seed, std::move(result.metrics));
        if (!done) {
          log("finished " + name + " (best valid " + number(records[j].best_valid) + ", test " +
              number(records[j].test_at_best) + ")");
        }
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.jobs, jobs.size()));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return select_configuration(config, std::move(records));
}

SweepReport load_sweep(const fs::path& sweep_dir) {
  const ExperimentConfig config = parse_experiment(read_text(sweep_dir / "sweep.json"));
  const fs::path root = sweep_dir.parent_path();
  std::vector<RunRecord> records;
  std::vector<std::string> missing;
  for (std::size_t p = 0; p < config.points.size(); ++p) {
    for (auto seed : config.seeds) {
      const fs::path dir = run_directory(root, config, p, seed);
      if (!run_finished(dir, config.points[p].config.budget)) {
        missing.push_back(config.points[p].label + " seed " + std::to_string(seed));
        continue;
      }
      records.push_back(summarize_run(p, seed, read_metrics(dir / "metrics.csv")));
    }
  }
  auto report = select_configuration(config, std::move(records));
  for (const auto& m : missing) report.warnings.push_back("run " + m + " is not finished");
  return report;
}

void write_report(const std::vector<SweepReport>& reports, const fs::path& out_dir) {
  fs::create_directories(out_dir / "curves");
  std::string results = "name,method,selected,seeds,mean_best_valid,mean_test,std_test,cell\n";
  std::string table;
  std::size_t width = 6;
  for (const auto& r : reports) width = std::max(width, r.name.size());
  char line[512];
  std::snprintf(line, sizeof line, "%-*s  %-10s  %s\n", static_cast<int>(width), "sweep", "method", "test");
  table += line;

  for (const auto& r : reports) {
    if (r.selected) {
      const auto& s = r.scores[*r.selected];
      results += csv_field(r.name) + "," + csv_field(r.method) + "," + csv_field(s.label) + "," +
                 std::to_string(s.completed) + "," + number(s.mean_best_valid) + "," + number(s.mean_test) + "," +
                 number(s.std_test) + "," + r.cell() + "\n";
    } else {
      results += csv_field(r.name) + "," + csv_field(r.method) + ",,0,,,,n/a\n";
    }
    std::snprintf(line, sizeof line, "%-*s  %-10s  %s\n", static_cast<int>(width), r.name.c_str(), r.method.c_str(),
                  r.cell().c_str());
    table += line;

    std::string scores = "label,seeds,mean_best_valid,mean_test,std_test\n";
    for (const auto& s : r.scores) {
      scores += csv_field(s.label) + "," + std::to_string(s.completed) + "," + number(s.mean_best_valid) + "," +
                number(s.mean_test) + "," + number(s.std_test) + "\n";
    }
    write_text(out_dir / ("scores_" + r.name + ".csv"), scores);

    const Curve curve = selected_test_curve(r);
    std::string curve_text = "env_steps,mean,std\n";
    for (std::size_t i = 0; i < curve.mean.size(); ++i) {
      curve_text += number(curve.env_steps[i]) + "," + number(curve.mean[i]) + "," + number(curve.std[i]) + "\n";
    }
    write_text(out_dir / "curves" / (r.name + ".csv"), curve_text);
  }
  for (const auto& r : reports) {
    for (const auto& w : r.warnings) table += "warning (" + r.name + "): " + w + "\n";
  }
  write_text(out_dir / "results.csv", results);
  write_text(out_dir / "results.txt", table);
}

TrainConfig checkpoint_config(const fs::path& checkpoint) {
  const fs::path file = run_dir_of(checkpoint) / "config.json";
  if (!fs::exists(file)) throw std::runtime_error("no run configuration found at " + file.string());
  return train_config_from_json(read_text(file));
}

EvalResult evaluate_checkpoint(const fs::path& checkpoint, const EnvSpec& env, Split split, std::size_t episodes,
                               std::uint64_t seed) {
  if (!fs::exists(checkpoint)) throw std::runtime_error("checkpoint " + checkpoint.string() + " does not exist");
  const TrainConfig cfg = checkpoint_config(checkpoint);
  if (!is_learned(cfg.agent.kind)) throw std::invalid_argument("UCB runs have no parameters to load");
  const auto probe = make_environment(env, Split::Train);
  auto agent = make_learned_agent(cfg.agent, shape_of(*probe), 0);
  load_parameter_entries(agent->params(), load_checkpoint(checkpoint));
  Rng rng(derive_seed(seed, {stream_id("eval")}));
  return evaluate_agent(*agent, env, split, episodes, seed, rng);
}

}  // namespace metarl
