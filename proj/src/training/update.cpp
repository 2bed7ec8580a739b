#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "metarl/training.hpp"

namespace metarl {

namespace {

Tensor column(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor::from({n, 1}, std::move(values));
}

std::size_t max_length(const std::vector<Trajectory>& trajectories) {
  std::size_t t = 0;
  for (const auto& traj : trajectories) t = std::max(t, traj.size());
  return t;
}

void check_nonempty(const std::vector<Trajectory>& trajectories, std::string_view what) {
  for (const auto& traj : trajectories) {
    if (traj.size() == 0) throw std::invalid_argument(std::string(what) + " batch holds an empty trajectory");
    if (traj.observations.size() != traj.size() || traj.rewards.size() != traj.size()) {
      throw std::invalid_argument(std::string(what) + " batch holds an inconsistent trajectory");
    }
  }
}

void check_tasks(const Trajectory& traj, std::size_t task_size) {
  if (traj.tasks.size() != traj.size()) throw std::invalid_argument("trajectory carries no task descriptors");
  for (const auto& mu : traj.tasks) {
    if (mu.size() != task_size) throw std::invalid_argument("trajectory task descriptor has the wrong size");
  }
}

struct Returns {
  std::vector<std::vector<double>> returns;
  std::vector<std::vector<double>> advantages;
};

/// values(b, t) is the critic at step t of trajectory b.
template <typename ValueAt>
Returns make_returns(const std::vector<Trajectory>& trajs, const LossWeights& w, bool use_critic, ValueAt value_at) {
  Returns out;
  const std::size_t horizon = use_critic ? w.horizon : kFullEpisode;
  for (std::size_t b = 0; b < trajs.size(); ++b) {
    const auto& traj = trajs[b];
    std::vector<double> v;
    if (use_critic) {
      v.resize(traj.size());
      for (std::size_t t = 0; t < traj.size(); ++t) v[t] = value_at(b, t);
    }
    auto r = compute_l_step_returns(traj.rewards, v, horizon, w.gamma);
    std::vector<double> a(r.size());
    for (std::size_t t = 0; t < r.size(); ++t) a[t] = r[t] - (use_critic ? v[t] : 0.0);
    out.returns.push_back(std::move(r));
    out.advantages.push_back(std::move(a));
  }
  return out;
}

void check_fixed(const std::vector<std::vector<double>>& fixed, const std::vector<Trajectory>& trajs) {
  if (fixed.size() != trajs.size()) throw std::invalid_argument("fixed targets do not match the batch");
  for (std::size_t b = 0; b < trajs.size(); ++b) {
    if (fixed[b].size() != trajs[b].size()) throw std::invalid_argument("fixed targets do not match the batch");
  }
}

struct Accumulator {
  Tensor total;
  void add(const Tensor& term) { total = total.defined() ? total + term : term; }
};

/// Actor, entropy, critic and auxiliary terms on the history batch, run
/// through the recurrent encoder in lockstep with finished rows masked out.
void history_terms(const LearnedAgent& agent, const std::vector<Trajectory>& trajs, const LossWeights& w,
                   const LossOptions& opt, Accumulator& acc, Loss& loss, double& entropy_sum, double& aux_sum,
                   std::size_t& step_count) {
  const AgentKind kind = agent.kind();
  const bool actor = kind == AgentKind::Import || kind == AgentKind::Rnn || kind == AgentKind::Ti;
  const bool belief = kind == AgentKind::Ti || kind == AgentKind::Ts;
  const bool embedding = kind == AgentKind::Import;
  const auto& shape = agent.env_shape();
  const std::size_t b_count = trajs.size(), t_max = max_length(trajs), obs_size = shape.observation;
  if (belief || embedding) {
    for (const auto& traj : trajs) check_tasks(traj, shape.task);
  }
  const auto* import_agent = embedding ? dynamic_cast<const ImportAgent*>(&agent) : nullptr;

  std::vector<Tensor> log_probs, entropies, values, aux;
  std::vector<double> mask(t_max * b_count, 0.0);
  Tensor hidden = agent.initial_state(b_count);
  StepInput in;
  std::vector<double> obs_rows(b_count * obs_size), task_rows(b_count * shape.task);
  std::vector<std::size_t> actions(b_count);
  for (std::size_t t = 0; t < t_max; ++t) {
    in.prev_action.assign(b_count, kNoAction);
    in.prev_reward.assign(b_count, 0.0);
    for (std::size_t b = 0; b < b_count; ++b) {
      const auto& traj = trajs[b];
      const std::size_t s = std::min(t, traj.size() - 1);
      if (t < traj.size()) mask[t * b_count + b] = 1.0;
      std::copy(traj.observations[s].begin(), traj.observations[s].end(), obs_rows.begin() + b * obs_size);
      actions[b] = traj.actions[s];
      if (t > 0 && t < traj.size()) {
        in.prev_action[b] = traj.actions[t - 1];
        in.prev_reward[b] = traj.rewards[t - 1];
      }
      if (belief || embedding) std::copy(traj.tasks[s].begin(), traj.tasks[s].end(), task_rows.begin() + b * shape.task);
    }
    in.observation = Tensor::from({b_count, obs_size}, obs_rows);
    auto step = agent.history_step(in, hidden);
    hidden = step.hidden;
    if (actor) {
      log_probs.push_back(pick(log_softmax(step.logits), actions));
      entropies.push_back(categorical_entropy(step.logits));
      values.push_back(step.value);
    }
    if (embedding) {
      auto mu = Tensor::from({b_count, shape.task}, task_rows);
      aux.push_back(auxiliary_distance(step.embedding, import_agent->f_mu(mu)));
    } else if (belief) {
      auto target = belief_target(agent.belief_family(), Tensor::from({b_count, shape.task}, task_rows));
      aux.push_back(neg(belief_log_likelihood(step.belief, target)));
    }
  }

  const double inv = 1.0 / static_cast<double>(b_count);
  Tensor mask_col = column(mask);
  std::size_t steps = 0;
  for (const auto& traj : trajs) steps += traj.size();

  if (actor) {
    Tensor lp = stack_rows(log_probs), ent = stack_rows(entropies), val = stack_rows(values);
    Returns targets;
    if (opt.fixed_targets != nullptr) {
      check_fixed(opt.fixed_targets->history_returns, trajs);
      check_fixed(opt.fixed_targets->history_advantages, trajs);
      targets.returns = opt.fixed_targets->history_returns;
      targets.advantages = opt.fixed_targets->history_advantages;
    } else {
      const auto v = val.data();
      targets = make_returns(trajs, w, opt.use_critic, [&](std::size_t b, std::size_t t) { return v[t * b_count + b]; });
    }
    std::vector<double> adv(t_max * b_count, 0.0), ret(t_max * b_count, 0.0);
    for (std::size_t b = 0; b < b_count; ++b) {
      for (std::size_t t = 0; t < trajs[b].size(); ++t) {
        adv[t * b_count + b] = targets.advantages[b][t];
        ret[t * b_count + b] = targets.returns[b][t];
      }
    }
    acc.add(scale(sum(mul(lp, column(std::move(adv)))), -inv));
    Tensor masked_entropy = sum(mul(ent, mask_col));
    acc.add(scale(masked_entropy, -w.entropy * inv));
    if (opt.use_critic) acc.add(scale(sum(mul(square(sub(val, column(std::move(ret)))), mask_col)), w.critic * inv));
    entropy_sum += masked_entropy.item();
    step_count += steps;
    loss.targets.history_returns = std::move(targets.returns);
    loss.targets.history_advantages = std::move(targets.advantages);
  }
  if (!aux.empty()) {
    Tensor masked_aux = sum(mul(stack_rows(aux), mask_col));
    // TS trains its belief network on this term alone, so it carries no weight.
    const double weight = kind == AgentKind::Ts ? 1.0 : w.beta;
    if (weight != 0.0) acc.add(scale(masked_aux, weight * inv));
    aux_sum += masked_aux.item();
  }
}

/// Actor, entropy and critic terms on the informed batch. The informed
/// policy is memoryless, so every step of every trajectory goes through one
/// forward pass.
void informed_terms(const LearnedAgent& agent, const std::vector<Trajectory>& trajs, const LossWeights& w,
                    const LossOptions& opt, Accumulator& acc, Loss& loss, double& entropy_sum,
                    std::size_t& step_count) {
  const auto& shape = agent.env_shape();
  std::size_t n = 0;
  for (const auto& traj : trajs) {
    check_tasks(traj, shape.task);
    n += traj.size();
  }
  std::vector<double> obs_rows, task_rows;
  std::vector<std::size_t> actions;
  obs_rows.reserve(n * shape.observation);
  task_rows.reserve(n * shape.task);
  actions.reserve(n);
  for (const auto& traj : trajs) {
    for (std::size_t t = 0; t < traj.size(); ++t) {
      obs_rows.insert(obs_rows.end(), traj.observations[t].begin(), traj.observations[t].end());
      task_rows.insert(task_rows.end(), traj.tasks[t].begin(), traj.tasks[t].end());
      actions.push_back(traj.actions[t]);
    }
  }
  auto step = agent.informed_step(Tensor::from({n, shape.observation}, std::move(obs_rows)),
                                  Tensor::from({n, shape.task}, std::move(task_rows)));
  Tensor lp = pick(log_softmax(step.logits), actions);
  Tensor ent = categorical_entropy(step.logits);

  Returns targets;
  if (opt.fixed_targets != nullptr) {
    check_fixed(opt.fixed_targets->informed_returns, trajs);
    check_fixed(opt.fixed_targets->informed_advantages, trajs);
    targets.returns = opt.fixed_targets->informed_returns;
    targets.advantages = opt.fixed_targets->informed_advantages;
  } else {
    std::vector<std::size_t> offset(trajs.size(), 0);
    for (std::size_t b = 1; b < trajs.size(); ++b) offset[b] = offset[b - 1] + trajs[b - 1].size();
    const auto v = step.value.data();
    targets = make_returns(trajs, w, opt.use_critic, [&](std::size_t b, std::size_t t) { return v[offset[b] + t]; });
  }
  std::vector<double> adv, ret;
  adv.reserve(n);
  ret.reserve(n);
  for (std::size_t b = 0; b < trajs.size(); ++b) {
    adv.insert(adv.end(), targets.advantages[b].begin(), targets.advantages[b].end());
    ret.insert(ret.end(), targets.returns[b].begin(), targets.returns[b].end());
  }

  const double inv = 1.0 / static_cast<double>(trajs.size());
  const double actor_weight = agent.kind() == AgentKind::Import ? w.lambda : 1.0;
  acc.add(scale(sum(mul(lp, column(std::move(adv)))), -actor_weight * inv));
  Tensor entropy = sum(ent);
  acc.add(scale(entropy, -w.entropy * inv));
  if (opt.use_critic) acc.add(scale(sum(square(sub(step.value, column(std::move(ret))))), w.critic * inv));
  entropy_sum += entropy.item();
  step_count += n;
  loss.targets.informed_returns = std::move(targets.returns);
  loss.targets.informed_advantages = std::move(targets.advantages);
}

}  // namespace

Loss build_loss(const LearnedAgent& agent, const Batch& batch, const LossWeights& weights, const LossOptions& options) {
  if (batch.history.empty() && batch.informed.empty()) throw std::invalid_argument("update on an empty batch");
  const AgentKind kind = agent.kind();
  if (!batch.history.empty() && kind == AgentKind::Informed) {
    throw std::invalid_argument("the informed agent does not learn from history trajectories");
  }
  if (!batch.informed.empty() && !agent.has_informed_policy()) {
    throw std::invalid_argument(std::string(to_string(kind)) + " agent has no informed policy to train");
  }
  check_nonempty(batch.history, "history");
  check_nonempty(batch.informed, "informed");

  Loss loss;
  Accumulator acc;
  double history_entropy = 0.0, informed_entropy = 0.0, aux = 0.0;
  std::size_t history_steps = 0, informed_steps = 0, aux_steps = 0;
  if (!batch.history.empty()) {
    history_terms(agent, batch.history, weights, options, acc, loss, history_entropy, aux, history_steps);
    for (const auto& traj : batch.history) aux_steps += traj.size();
  }
  if (!batch.informed.empty()) {
    informed_terms(agent, batch.informed, weights, options, acc, loss, informed_entropy, informed_steps);
  }
  loss.total = acc.total;
  loss.stats.loss = loss.total.item();
  loss.stats.steps = batch.steps();
  if (history_steps > 0) {
    loss.stats.entropy = history_entropy / static_cast<double>(history_steps);
  } else if (informed_steps > 0) {
    loss.stats.entropy = informed_entropy / static_cast<double>(informed_steps);
  }
  loss.stats.aux_loss = aux_steps > 0 ? aux / static_cast<double>(aux_steps) : 0.0;
  return loss;
}

UpdateStats compute_gradients(LearnedAgent& agent, const Batch& batch, const LossWeights& weights,
                              const LossOptions& options) {
  agent.params().zero_grad();
  Tape tape;
  Loss loss;
  {
    Tape::Scope scope(tape);
    loss = build_loss(agent, batch, weights, options);
  }
  tape.backward(loss.total);
  loss.stats.pre_clip_norm = gradient_norm(agent.params().tensors());
  return loss.stats;
}

UpdateStats apply_update(LearnedAgent& agent, Adam& optimizer, const Batch& batch, const LossWeights& weights,
                         const LossOptions& options) {
  auto stats = compute_gradients(agent, batch, weights, options);
  if (!std::isfinite(stats.pre_clip_norm)) throw std::runtime_error("non-finite gradient norm");
  clip_gradients(agent.params().tensors(), weights.clip_norm);
  optimizer.step();
  return stats;
}

UpdateStats a2c_update_import(LearnedAgent& agent, Adam& optimizer, const Batch& batch, const LossWeights& weights) {
  if (agent.kind() != AgentKind::Import) throw std::invalid_argument("a2c_update_import needs an IMPORT agent");
  return apply_update(agent, optimizer, batch, weights);
}

UpdateStats a2c_update_baseline(LearnedAgent& agent, Adam& optimizer, const Batch& batch, const LossWeights& weights) {
  if (agent.kind() == AgentKind::Import) throw std::invalid_argument("IMPORT agents use a2c_update_import");
  return apply_update(agent, optimizer, batch, weights);
}

UpdateStats reinforce_update(LearnedAgent& agent, Adam& optimizer, const Batch& batch, const LossWeights& weights) {
  LossOptions options;
  options.use_critic = false;
  return apply_update(agent, optimizer, batch, weights, options);
}

}  // namespace metarl
