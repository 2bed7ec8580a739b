#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>

#include "json.hpp"
#include "metarl/checkpoint.hpp"
#include "metarl/training.hpp"

namespace metarl {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& field) {
  if (field.empty()) return 0.0;
  std::size_t used = 0;
  const double v = std::stod(field, &used);
  if (used != field.size()) throw std::invalid_argument("bad number '" + field + "' in metric row");
  return v;
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

void write_checkpoint(const fs::path& path, const std::vector<CheckpointEntry>& entries) {
  const fs::path tmp = path.string() + ".tmp";
  save_checkpoint(tmp, entries);
  fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

struct RunFiles {
  fs::path root;
  fs::path metrics() const { return root / "metrics.csv"; }
  fs::path latest() const { return root / "checkpoints" / "latest.ckpt"; }
  fs::path latest_state() const { return root / "checkpoints" / "latest.json"; }
  fs::path best() const { return root / "checkpoints" / "best.ckpt"; }
  fs::path best_state() const { return root / "checkpoints" / "best.json"; }
};

struct RunState {
  std::uint64_t updates = 0;
  std::uint64_t env_steps = 0;
  double best_valid = -std::numeric_limits<double>::infinity();
  std::uint64_t best_updates = 0;
  bool complete = false;
  std::int64_t budget = 0;
};

json state_json(const RunState& s, std::uint64_t adam_steps) {
  json j;
  j["updates"] = s.updates;
  j["env_steps"] = s.env_steps;
  j["adam_steps"] = adam_steps;
  j["best_updates"] = s.best_updates;
  j["best_valid"] = std::isfinite(s.best_valid) ? json(s.best_valid) : json(nullptr);
  j["complete"] = s.complete;
  j["budget"] = s.budget;
  return j;
}

std::vector<CheckpointEntry> optimizer_entries(const ParameterSet& params, const Adam& adam) {
  std::vector<CheckpointEntry> out;
  const auto& entries = params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    out.push_back({"adam.m/" + entries[i].name, entries[i].tensor.shape(), adam.first_moments()[i]});
    out.push_back({"adam.v/" + entries[i].name, entries[i].tensor.shape(), adam.second_moments()[i]});
  }
  return out;
}

void restore_optimizer(const ParameterSet& params, Adam& adam, const std::vector<CheckpointEntry>& saved,
                       std::uint64_t steps) {
  std::unordered_map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : saved) by_name[e.name] = &e;
  const auto& entries = params.entries();
  auto fetch = [&](const std::string& name, std::size_t size) -> const std::vector<double>& {
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second->values.size() != size) {
      throw std::runtime_error("checkpoint lacks optimizer state '" + name + "'");
    }
    return it->second->values;
  };
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::size_t size = entries[i].tensor.numel();
    adam.first_moments()[i] = fetch("adam.m/" + entries[i].name, size);
    adam.second_moments()[i] = fetch("adam.v/" + entries[i].name, size);
  }
  adam.set_steps(steps);
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

/// Trajectories k with k % workers == w belong to worker w.
std::size_t share(std::size_t n, std::size_t workers, std::size_t w) {
  return n / workers + (w < n % workers ? 1 : 0);
}

struct Worker {
  std::vector<std::unique_ptr<Environment>> envs;
  std::vector<Environment*> handles;
  std::unique_ptr<LearnedAgent> replica;
  std::size_t history = 0;
  std::size_t informed = 0;
  Batch out;
};

}  // namespace

std::string format_metric_row(const MetricRow& row) {
  std::string line = std::to_string(row.env_steps) + "," + std::to_string(row.updates) + "," +
                     std::string(to_string(row.split)) + "," + number(row.mean_return) + "," +
                     number(row.std_return) + ",";
  if (row.split == Split::Train) {
    line += number(row.entropy) + "," + number(row.pre_clip_grad_norm) + "," + number(row.aux_loss);
  } else {
    line += ",,";
  }
  return line;
}

MetricRow parse_metric_row(std::string_view line) {
  std::vector<std::string> fields;
  std::string current;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(current);
      current.clear();
    } else if (c != '\r' && c != '\n') {
      current.push_back(c);
    }
  }
  fields.push_back(current);
  if (fields.size() != 8) throw std::invalid_argument("metric row needs 8 fields: '" + std::string(line) + "'");
  MetricRow row;
  row.env_steps = std::stoull(fields[0]);
  row.updates = std::stoull(fields[1]);
  row.split = split_from_string(fields[2]);
  row.mean_return = parse_double(fields[3]);
  row.std_return = parse_double(fields[4]);
  row.entropy = parse_double(fields[5]);
  row.pre_clip_grad_norm = parse_double(fields[6]);
  row.aux_loss = parse_double(fields[7]);
  return row;
}

std::vector<MetricRow> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read metrics " + path.string());
  std::vector<MetricRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      if (line.rfind("env_steps", 0) == 0) continue;
    }
    if (line.empty()) continue;
    rows.push_back(parse_metric_row(line));
  }
  return rows;
}

std::vector<CheckpointEntry> parameter_entries(const ParameterSet& params, std::string_view prefix) {
  std::vector<CheckpointEntry> out;
  for (const auto& e : params.entries()) {
    const auto data = e.tensor.data();
    out.push_back({std::string(prefix) + e.name, e.tensor.shape(), std::vector<double>(data.begin(), data.end())});
  }
  return out;
}

void load_parameter_entries(ParameterSet& params, const std::vector<CheckpointEntry>& entries,
                            std::string_view prefix) {
  std::unordered_map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  for (const auto& p : params.entries()) {
    const std::string name = std::string(prefix) + p.name;
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint lacks parameter '" + name + "'");
    if (it->second->shape != p.tensor.shape()) {
      throw std::runtime_error("checkpoint parameter '" + name + "' has shape " + shape_to_string(it->second->shape) +
                               ", expected " + shape_to_string(p.tensor.shape()));
    }
    auto dst = Tensor(p.tensor).mutable_data();
    std::copy(it->second->values.begin(), it->second->values.end(), dst.begin());
  }
}

TrainResult train_loop(const TrainConfig& cfg, const MetricCallback& on_metric) {
  if (cfg.budget <= 0) throw std::invalid_argument("step budget must be positive");
  if (cfg.eval_interval == 0) throw std::invalid_argument("eval interval must be positive");
  if (cfg.eval_episodes == 0) throw std::invalid_argument("eval episodes must be positive");
  if (cfg.workers == 0) throw std::invalid_argument("need at least one worker");

  TrainResult result;
  const bool persist = !cfg.output_dir.empty();
  const RunFiles files{cfg.output_dir};
  RunState state;
  state.budget = cfg.budget;
  std::ofstream metrics_out;

  if (persist) {
    fs::create_directories(files.root / "checkpoints");
    if (fs::exists(files.latest_state()) && fs::exists(files.metrics())) {
      const json saved = read_json(files.latest_state());
      state.updates = saved.at("updates").get<std::uint64_t>();
      state.env_steps = saved.at("env_steps").get<std::uint64_t>();
      state.best_updates = saved.at("best_updates").get<std::uint64_t>();
      if (!saved.at("best_valid").is_null()) state.best_valid = saved.at("best_valid").get<double>();
      // A finished run is only finished for the budget it was given.
      state.complete = saved.at("complete").get<bool>() && saved.value("budget", std::int64_t{0}) == cfg.budget;
      for (const auto& row : read_metrics(files.metrics())) {
        if (row.updates <= state.updates) result.metrics.push_back(row);
      }
    }
    std::string text = std::string(kMetricHeader) + "\n";
    for (const auto& row : result.metrics) text += format_metric_row(row) + "\n";
    write_text(files.metrics(), text);
    metrics_out.open(files.metrics(), std::ios::app);
  }
  auto emit = [&](const MetricRow& row) {
    result.metrics.push_back(row);
    if (persist) metrics_out << format_metric_row(row) << '\n' << std::flush;
    if (on_metric) on_metric(row);
  };
  auto save_state = [&](std::uint64_t adam_steps) {
    if (persist) write_text(files.latest_state(), state_json(state, adam_steps).dump(2) + "\n");
  };

  if (!is_learned(cfg.agent.kind)) {
    if (!state.complete) {
      for (Split split : {Split::Valid, Split::Test}) {
        auto actor = make_bandit_actor(cfg.agent, cfg.env);
        Rng rng(derive_seed(cfg.seed, {stream_id("eval"), 0, static_cast<std::uint64_t>(split)}));
        const auto ev =
            evaluate_actor(*actor, cfg.env, split, cfg.eval_episodes, evaluation_seed(cfg.env, split), rng);
        emit({0, 0, split, ev.mean, ev.std});
      }
      state.complete = true;
      save_state(0);
    }
    return result;
  }

  const AgentKind kind = cfg.agent.kind;
  const auto probe = make_environment(cfg.env, Split::Train);
  const EnvShape shape = shape_of(*probe);
  if (kind == AgentKind::Informed && !make_environment(cfg.env, Split::Valid)->task_visible()) {
    throw std::invalid_argument("the informed agent cannot be evaluated where the task is hidden (" + cfg.env.name +
                                ")");
  }
  result.agent = make_learned_agent(cfg.agent, shape, derive_seed(cfg.seed, {stream_id("init")}));
  LearnedAgent& agent = *result.agent;
  AdamConfig adam_config;
  adam_config.learning_rate = cfg.weights.learning_rate;
  Adam adam(agent.params().tensors(), adam_config);

  if (persist && fs::exists(files.latest_state()) && fs::exists(files.latest())) {
    const auto saved = load_checkpoint(files.latest());
    load_parameter_entries(agent.params(), saved);
    restore_optimizer(agent.params(), adam, saved, read_json(files.latest_state()).at("adam_steps").get<std::uint64_t>());
  }
  result.updates = state.updates;
  result.env_steps = state.env_steps;
  if (state.complete) return result;

  const BatchSplit split = batch_split(kind, cfg.weights);
  const std::size_t n_workers = cfg.workers;
  std::vector<Worker> workers(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) {
    auto& worker = workers[w];
    worker.history = share(split.history, n_workers, w);
    worker.informed = share(split.informed, n_workers, w);
    for (std::size_t i = 0; i < std::max(worker.history, worker.informed); ++i) {
      worker.envs.push_back(make_environment(cfg.env, Split::Train));
      worker.handles.push_back(worker.envs.back().get());
    }
    if (n_workers > 1) {
      worker.replica = make_learned_agent(cfg.agent, shape, 0);
      worker.replica->params().copy_values_from(agent.params());
    }
  }

  auto run_worker = [&](std::size_t w, std::uint64_t update) {
    auto& worker = workers[w];
    const LearnedAgent& actor = worker.replica ? *worker.replica : agent;
    Rng history_rng(derive_seed(cfg.seed, {stream_id("collect"), update, 0, w}));
    worker.out.history = collect(worker.handles, actor, PolicyTag::History, worker.history, history_rng);
    Rng informed_rng(derive_seed(cfg.seed, {stream_id("collect"), update, 1, w}));
    worker.out.informed = collect(worker.handles, actor, PolicyTag::Informed, worker.informed, informed_rng);
  };
  auto collect_batch = [&](std::uint64_t update) {
    if (n_workers == 1) {
      run_worker(0, update);
    } else {
      std::vector<std::thread> threads;
      std::vector<std::exception_ptr> errors(n_workers);
      for (std::size_t w = 0; w < n_workers; ++w) {
        threads.emplace_back([&, w] {
          try {
            run_worker(w, update);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
      for (auto& t : threads) t.join();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }
    Batch batch;
    for (std::size_t k = 0; k < split.history; ++k) {
      batch.history.push_back(std::move(workers[k % n_workers].out.history[k / n_workers]));
    }
    for (std::size_t k = 0; k < split.informed; ++k) {
      batch.informed.push_back(std::move(workers[k % n_workers].out.informed[k / n_workers]));
    }
    return batch;
  };

  const auto budget = static_cast<std::uint64_t>(cfg.budget);
  std::vector<double> window_returns;
  double window_entropy = 0.0, window_norm = 0.0, window_aux = 0.0;
  std::size_t window_updates = 0;

  while (budget - state.env_steps >= cfg.weights.batch_size) {
    Batch batch = collect_batch(state.updates);
    const std::size_t steps = batch.steps();
    if (state.env_steps + steps > budget) break;
    UpdateStats stats;
    if (cfg.reinforce) {
      stats = reinforce_update(agent, adam, batch, cfg.weights);
    } else if (kind == AgentKind::Import) {
      stats = a2c_update_import(agent, adam, batch, cfg.weights);
    } else {
      stats = a2c_update_baseline(agent, adam, batch, cfg.weights);
    }
    state.env_steps += steps;
    ++state.updates;
    for (auto& worker : workers) {
      if (worker.replica) worker.replica->params().copy_values_from(agent.params());
    }

    for (const auto& traj : kind == AgentKind::Informed ? batch.informed : batch.history) {
      window_returns.push_back(traj.total_reward());
    }
    window_entropy += stats.entropy;
    window_norm += stats.pre_clip_norm;
    window_aux += stats.aux_loss;
    ++window_updates;

    if (state.updates % cfg.eval_interval == 0) {
      const auto [mean, std] = mean_std(window_returns);
      const double inv = 1.0 / static_cast<double>(window_updates);
      emit({state.env_steps, state.updates, Split::Train, mean, std, window_entropy * inv, window_norm * inv,
            window_aux * inv});
      window_returns.clear();
      window_entropy = window_norm = window_aux = 0.0;
      window_updates = 0;

      double valid = 0.0;
      for (Split s : {Split::Valid, Split::Test}) {
        Rng rng(derive_seed(cfg.seed, {stream_id("eval"), state.updates, static_cast<std::uint64_t>(s)}));
        const auto ev = evaluate_agent(agent, cfg.env, s, cfg.eval_episodes, evaluation_seed(cfg.env, s), rng);
        emit({state.env_steps, state.updates, s, ev.mean, ev.std});
        if (s == Split::Valid) valid = ev.mean;
      }
      const bool improved = valid > state.best_valid;
      if (improved) {
        state.best_valid = valid;
        state.best_updates = state.updates;
      }
      if (persist) {
        if (improved) {
          write_checkpoint(files.best(), parameter_entries(agent.params()));
          write_text(files.best_state(), state_json(state, adam.steps()).dump(2) + "\n");
        }
        auto entries = parameter_entries(agent.params());
        auto moments = optimizer_entries(agent.params(), adam);
        entries.insert(entries.end(), moments.begin(), moments.end());
        write_checkpoint(files.latest(), entries);
        save_state(adam.steps());
      }
    }
  }

  state.complete = true;
  if (persist) {
    auto entries = parameter_entries(agent.params());
    auto moments = optimizer_entries(agent.params(), adam);
    entries.insert(entries.end(), moments.begin(), moments.end());
    write_checkpoint(files.latest(), entries);
    save_state(adam.steps());
  }
  result.updates = state.updates;
  result.env_steps = state.env_steps;
  return result;
}

}  // namespace metarl
