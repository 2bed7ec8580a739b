#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "metarl/training.hpp"

namespace metarl {

std::string_view to_string(PolicyTag tag) { return tag == PolicyTag::History ? "history" : "informed"; }

double Trajectory::total_reward() const {
  double total = 0.0;
  for (double r : rewards) total += r;
  return total;
}

TrajectoryBuffer::TrajectoryBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("trajectory buffer needs a positive capacity");
}

void TrajectoryBuffer::add(Trajectory trajectory) {
  if (full()) throw std::logic_error("trajectory buffer is full");
  items_.push_back(std::move(trajectory));
}

std::size_t TrajectoryBuffer::steps() const {
  std::size_t n = 0;
  for (const auto& t : items_) n += t.size();
  return n;
}

std::vector<Trajectory> TrajectoryBuffer::take() {
  std::vector<Trajectory> out;
  out.swap(items_);
  return out;
}

std::size_t Batch::steps() const {
  std::size_t n = 0;
  for (const auto& t : history) n += t.size();
  for (const auto& t : informed) n += t.size();
  return n;
}

BatchSplit batch_split(AgentKind kind, const LossWeights& weights) {
  const std::size_t m = weights.batch_size;
  if (m == 0) throw std::invalid_argument("batch size must be positive");
  switch (kind) {
    case AgentKind::Import:
    case AgentKind::Ts: {
      if (weights.lambda < 0.0 || weights.lambda > 1.0) throw std::invalid_argument("lambda must lie in [0, 1]");
      const auto informed = static_cast<std::size_t>(std::lround(weights.lambda * static_cast<double>(m)));
      return {m - informed, informed};
    }
    case AgentKind::Rnn:
    case AgentKind::Ti: return {m, 0};
    case AgentKind::Informed: return {0, m};
    default: throw std::invalid_argument(std::string(to_string(kind)) + " is not a learned agent");
  }
}

std::vector<Trajectory> collect(std::span<Environment* const> envs, const LearnedAgent& agent, PolicyTag tag,
                                std::size_t n, Rng& rng) {
  if (n == 0) return {};
  if (envs.size() < n) throw std::invalid_argument("collect: fewer environments than trajectories");
  const bool ts = agent.kind() == AgentKind::Ts;
  if (tag == PolicyTag::Informed) {
    if (!agent.has_informed_policy()) throw std::logic_error("collect: agent has no informed policy");
    for (std::size_t i = 0; i < n; ++i) {
      if (envs[i]->split() != Split::Train || !envs[i]->task_visible()) {
        throw std::invalid_argument("collect: informed collection needs the training task channel, got a " +
                                    std::string(to_string(envs[i]->split())) + " environment");
      }
    }
  } else if (!agent.has_history_policy() && !ts) {
    throw std::logic_error("collect: agent has no history policy");
  }

  const std::size_t obs_size = agent.env_shape().observation;
  const std::size_t task_size = agent.env_shape().task;
  std::vector<Trajectory> out(n);
  std::vector<std::vector<double>> obs(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].tag = tag;
    out[i].episode_seed = rng();
    envs[i]->seed(out[i].episode_seed);
    obs[i] = envs[i]->reset();
  }

  StepInput in;
  in.prev_action.assign(n, kNoAction);
  in.prev_reward.assign(n, 0.0);
  Tensor hidden = tag == PolicyTag::History ? agent.initial_state(n) : Tensor();
  std::vector<bool> active(n, true);
  std::size_t remaining = n;
  std::vector<double> obs_rows(n * obs_size);
  std::vector<double> task_rows;

  while (remaining > 0) {
    for (std::size_t i = 0; i < n; ++i) std::copy(obs[i].begin(), obs[i].end(), obs_rows.begin() + i * obs_size);
    in.observation = Tensor::from({n, obs_size}, obs_rows);

    std::vector<std::size_t> actions;
    ActResult annotated;
    bool has_annotations = false;
    if (tag == PolicyTag::Informed) {
      task_rows.assign(n * task_size, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        if (!active[i]) continue;
        const auto mu = envs[i]->task();
        std::copy(mu.begin(), mu.end(), task_rows.begin() + i * task_size);
      }
      annotated = act_informed(agent, in.observation, Tensor::from({n, task_size}, task_rows), rng);
      actions = annotated.actions;
      has_annotations = true;
    } else if (ts) {
      auto r = ts_act(agent, in, hidden, rng);
      hidden = r.hidden;
      actions = std::move(r.actions);
    } else {
      annotated = act_history(agent, in, hidden, rng);
      hidden = annotated.hidden;
      actions = annotated.actions;
      has_annotations = true;
    }

    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      auto& traj = out[i];
      traj.observations.push_back(obs[i]);
      traj.actions.push_back(actions[i]);
      if (has_annotations) {
        traj.log_probs.push_back(annotated.log_probs[i]);
        traj.values.push_back(annotated.values[i]);
        traj.entropies.push_back(annotated.entropies[i]);
      }
      auto result = envs[i]->step(actions[i]);
      traj.rewards.push_back(result.reward);
      traj.dones.push_back(result.done);
      traj.tasks.push_back(std::move(result.task));
      in.prev_action[i] = actions[i];
      in.prev_reward[i] = result.reward;
      obs[i] = std::move(result.observation);
      if (result.done) {
        active[i] = false;
        --remaining;
      }
    }
  }
  return out;
}

std::vector<double> compute_l_step_returns(std::span<const double> rewards, std::span<const double> values,
                                           std::size_t horizon, double gamma) {
  if (horizon == 0) throw std::invalid_argument("L-step returns need L >= 1");
  const std::size_t n = rewards.size();
  if (!values.empty() && values.size() != n) {
    throw std::invalid_argument("compute_l_step_returns: " + std::to_string(values.size()) + " values for " +
                                std::to_string(n) + " rewards");
  }
  std::vector<double> out(n, 0.0);
  if (n == 0) return out;
  if (horizon >= n) {
    double running = 0.0;
    for (std::size_t t = n; t-- > 0;) {
      running = rewards[t] + gamma * running;
      out[t] = running;
    }
    return out;
  }
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t end = horizon < n - t ? t + horizon : n;
    double total = 0.0, discount = 1.0;
    for (std::size_t i = t; i < end; ++i) {
      total += discount * rewards[i];
      discount *= gamma;
    }
    if (end < n && !values.empty()) total += discount * values[end];
    out[t] = total;
  }
  return out;
}

}  // namespace metarl
