#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metarl/agents.hpp"
#include "metarl/checkpoint.hpp"
#include "metarl/environments.hpp"
#include "metarl/optim.hpp"
#include "metarl/rng.hpp"

namespace metarl {

enum class PolicyTag { History, Informed };

std::string_view to_string(PolicyTag tag);

/// One complete episode. Step t holds the observation the agent saw before
/// acting, the action, the reward it produced and the task in effect.
struct Trajectory {
  PolicyTag tag = PolicyTag::History;
  std::uint64_t episode_seed = 0;  // environment seed; replaying the actions reproduces the episode
  std::vector<std::vector<double>> observations;
  std::vector<std::size_t> actions;
  std::vector<double> rewards;
  std::vector<bool> dones;
  std::vector<std::vector<double>> tasks;
  // Collection-time annotations; empty when the collecting policy is TS.
  std::vector<double> log_probs;
  std::vector<double> values;
  std::vector<double> entropies;

  std::size_t size() const { return actions.size(); }
  double total_reward() const;
};

/// Holds trajectories until `capacity` of them have arrived.
class TrajectoryBuffer {
 public:
  explicit TrajectoryBuffer(std::size_t capacity);

  void add(Trajectory trajectory);
  bool full() const { return items_.size() >= capacity_; }
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t steps() const;
  /// Hands over the contents and empties the buffer.
  std::vector<Trajectory> take();

 private:
  std::size_t capacity_;
  std::vector<Trajectory> items_;
};

/// Value of L selecting Monte-Carlo (whole-episode) returns.
inline constexpr std::size_t kFullEpisode = std::numeric_limits<std::size_t>::max();

struct LossWeights {
  double lambda = 0.5;   // informed fraction of the batch and weight of its actor term
  double beta = 0.1;     // auxiliary loss
  double entropy = 0.01;
  double critic = 0.1;
  double gamma = 0.95;
  std::size_t horizon = 5;  // L
  double learning_rate = 1e-3;
  double clip_norm = 40.0;
  std::size_t batch_size = 4;  // trajectories per update
};

struct BatchSplit {
  std::size_t history = 0;
  std::size_t informed = 0;
};

/// How many of the batch_size trajectories each policy collects: IMPORT and
/// TS split by round(lambda * M), RNN/TI use the history policy only and the
/// informed agent the informed policy only.
BatchSplit batch_split(AgentKind kind, const LossWeights& weights);

/// Runs n episodes in lockstep, episode i on envs[i], which is reseeded from
/// `rng` first. Informed collection reads the task channel and so needs
/// training-split environments.
std::vector<Trajectory> collect(std::span<Environment* const> envs, const LearnedAgent& agent, PolicyTag tag,
                                std::size_t n, Rng& rng);

/// R_t = sum_{i < min(L, T-t)} gamma^i r_{t+i} + [t + L < T] gamma^L V(s_{t+L}).
/// The end of the record is the end of the episode, so nothing bootstraps past
/// it. `values` may be empty (V = 0).
std::vector<double> compute_l_step_returns(std::span<const double> rewards, std::span<const double> values,
                                           std::size_t horizon, double gamma);

struct Batch {
  std::vector<Trajectory> history;
  std::vector<Trajectory> informed;

  std::size_t steps() const;
};

/// Per-step returns and advantages for every trajectory of a batch.
struct Targets {
  std::vector<std::vector<double>> history_returns;
  std::vector<std::vector<double>> history_advantages;
  std::vector<std::vector<double>> informed_returns;
  std::vector<std::vector<double>> informed_advantages;
};

struct UpdateStats {
  double loss = 0.0;
  double pre_clip_norm = 0.0;
  double entropy = 0.0;   // mean per step
  double aux_loss = 0.0;  // mean per step: embedding distance, or belief NLL
  std::size_t steps = 0;
};

struct LossOptions {
  bool use_critic = true;  // false: V = 0 baseline, no critic term
  /// When set, returns and advantages come from here instead of the critic
  /// evaluated on the batch (lets finite differences treat them as constants).
  const Targets* fixed_targets = nullptr;
};

struct Loss {
  Tensor total;
  UpdateStats stats;
  Targets targets;
};

/// The scalar whose gradient is the agent's update direction. Records on the
/// active tape, if any. Throws on an empty batch or a batch the agent cannot
/// learn from.
Loss build_loss(const LearnedAgent& agent, const Batch& batch, const LossWeights& weights,
                const LossOptions& options = {});

/// Zeroes the gradients and accumulates d(loss)/d(params) without stepping.
UpdateStats compute_gradients(LearnedAgent& agent, const Batch& batch, const LossWeights& weights,
                              const LossOptions& options = {});

/// Gradients, global clipping and one Adam step.
UpdateStats apply_update(LearnedAgent& agent, Adam& optimizer, const Batch& batch, const LossWeights& weights,
                         const LossOptions& options = {});

UpdateStats a2c_update_import(LearnedAgent& agent, Adam& optimizer, const Batch& batch, const LossWeights& weights);
/// RNN, TI, TS and the informed agent.
UpdateStats a2c_update_baseline(LearnedAgent& agent, Adam& optimizer, const Batch& batch, const LossWeights& weights);
/// Whole-episode returns with no critic.
UpdateStats reinforce_update(LearnedAgent& agent, Adam& optimizer, const Batch& batch, const LossWeights& weights);

struct EvalResult {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::vector<double> returns;
};

/// Undiscounted returns of `episodes` lockstep episodes; episode i runs on an
/// environment seeded with derive_seed(seed, {i}).
EvalResult evaluate_actor(Actor& actor, const EnvSpec& env, Split split, std::size_t episodes, std::uint64_t seed,
                          Rng& rng);
/// Evaluates the informed policy with the true task.
EvalResult evaluate_informed(const LearnedAgent& agent, const EnvSpec& env, Split split, std::size_t episodes,
                             std::uint64_t seed, Rng& rng);
/// The agent as deployed: history policy, TS sampling, or the informed
/// policy for the informed agent.
EvalResult evaluate_agent(const LearnedAgent& agent, const EnvSpec& env, Split split, std::size_t episodes,
                          std::uint64_t seed, Rng& rng);
/// Fresh UCB / SW-UCB actor for a bandit spec.
std::unique_ptr<Actor> make_bandit_actor(const AgentSpec& agent, const EnvSpec& env);

/// Episode seeds for evaluation: shared by every run on the same environment
/// spec so that all runs are scored on the same tasks.
std::uint64_t evaluation_seed(const EnvSpec& env, Split split);

struct TrainConfig {
  EnvSpec env;
  AgentSpec agent;
  LossWeights weights;
  bool reinforce = false;
  std::uint64_t seed = 0;
  std::int64_t budget = 100000;  // environment steps
  std::size_t eval_interval = 10;  // updates
  std::size_t eval_episodes = 100;
  std::size_t workers = 1;
  std::filesystem::path output_dir;  // empty: keep everything in memory
};

struct MetricRow {
  std::uint64_t env_steps = 0;
  std::uint64_t updates = 0;
  Split split = Split::Train;
  double mean_return = 0.0;
  double std_return = 0.0;
  // Training rows only.
  double entropy = 0.0;
  double pre_clip_grad_norm = 0.0;
  double aux_loss = 0.0;
};

inline constexpr std::string_view kMetricHeader =
    "env_steps,updates,split,mean_return,std_return,entropy,pre_clip_grad_norm,aux_loss";
std::string format_metric_row(const MetricRow& row);
MetricRow parse_metric_row(std::string_view line);
std::vector<MetricRow> read_metrics(const std::filesystem::path& path);

struct TrainResult {
  std::vector<MetricRow> metrics;
  std::uint64_t env_steps = 0;
  std::uint64_t updates = 0;
  std::unique_ptr<LearnedAgent> agent;  // null for UCB agents
};

using MetricCallback = std::function<void(const MetricRow&)>;

/// Collect / update until the step budget is spent. Every eval_interval
/// updates the deployed policy is scored on the validation and test splits
/// and, with an output directory, the run is checkpointed there (latest and
/// best-validation). A run directory holding a checkpoint is resumed.
TrainResult train_loop(const TrainConfig& config, const MetricCallback& on_metric = {});

/// Parameters plus optimizer state under prefixed names.
std::vector<CheckpointEntry> parameter_entries(const ParameterSet& params, std::string_view prefix = "");
void load_parameter_entries(ParameterSet& params, const std::vector<CheckpointEntry>& entries,
                            std::string_view prefix = "");

}  // namespace metarl
