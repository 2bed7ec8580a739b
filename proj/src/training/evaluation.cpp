#include <cmath>
#include <stdexcept>
#include <string>

#include "metarl/training.hpp"

namespace metarl {

namespace {

EvalResult summarize(std::vector<double> returns) {
  EvalResult out;
  if (returns.empty()) return out;
  double total = 0.0;
  for (double r : returns) total += r;
  out.mean = total / static_cast<double>(returns.size());
  double sq = 0.0;
  for (double r : returns) sq += (r - out.mean) * (r - out.mean);
  out.std = std::sqrt(sq / static_cast<double>(returns.size()));
  out.returns = std::move(returns);
  return out;
}

/// Lockstep rollout; `choose` maps the step input (and, for the informed
/// policy, the active tasks) to one action per row.
template <typename Choose>
EvalResult rollout(const EnvSpec& spec, Split split, std::size_t episodes, std::uint64_t seed, Choose choose) {
  if (episodes == 0) throw std::invalid_argument("evaluation needs at least one episode");
  std::vector<std::unique_ptr<Environment>> envs;
  std::vector<std::vector<double>> obs(episodes);
  envs.reserve(episodes);
  for (std::size_t i = 0; i < episodes; ++i) {
    envs.push_back(make_environment(spec, split));
    envs.back()->seed(derive_seed(seed, {i}));
    obs[i] = envs.back()->reset();
  }
  const std::size_t obs_size = envs.front()->observation_size();
  std::vector<double> returns(episodes, 0.0), rows(episodes * obs_size);
  std::vector<bool> active(episodes, true);
  std::size_t remaining = episodes;
  StepInput in;
  in.prev_action.assign(episodes, kNoAction);
  in.prev_reward.assign(episodes, 0.0);
  while (remaining > 0) {
    for (std::size_t i = 0; i < episodes; ++i) std::copy(obs[i].begin(), obs[i].end(), rows.begin() + i * obs_size);
    in.observation = Tensor::from({episodes, obs_size}, rows);
    const auto actions = choose(in, envs, active);
    for (std::size_t i = 0; i < episodes; ++i) {
      if (!active[i]) continue;
      auto result = envs[i]->step(actions[i]);
      returns[i] += result.reward;
      in.prev_action[i] = actions[i];
      in.prev_reward[i] = result.reward;
      obs[i] = std::move(result.observation);
      if (result.done) {
        active[i] = false;
        --remaining;
      }
    }
  }
  return summarize(std::move(returns));
}

}  // namespace

EvalResult evaluate_actor(Actor& actor, const EnvSpec& env, Split split, std::size_t episodes, std::uint64_t seed,
                          Rng& rng) {
  actor.reset(episodes);
  return rollout(env, split, episodes, seed,
                 [&](const StepInput& in, const auto&, const auto&) { return actor.act(in, rng); });
}

EvalResult evaluate_informed(const LearnedAgent& agent, const EnvSpec& env, Split split, std::size_t episodes,
                             std::uint64_t seed, Rng& rng) {
  InformedActor actor(agent);
  const std::size_t task_size = agent.env_shape().task;
  return rollout(env, split, episodes, seed,
                 [&](const StepInput& in, const std::vector<std::unique_ptr<Environment>>& envs,
                     const std::vector<bool>& active) {
                   std::vector<double> tasks(envs.size() * task_size, 0.0);
                   for (std::size_t i = 0; i < envs.size(); ++i) {
                     if (!active[i]) continue;
                     const auto mu = envs[i]->task();
                     std::copy(mu.begin(), mu.end(), tasks.begin() + i * task_size);
                   }
                   return actor.act(in.observation, Tensor::from({envs.size(), task_size}, std::move(tasks)), rng);
                 });
}

EvalResult evaluate_agent(const LearnedAgent& agent, const EnvSpec& env, Split split, std::size_t episodes,
                          std::uint64_t seed, Rng& rng) {
  if (agent.kind() == AgentKind::Informed) return evaluate_informed(agent, env, split, episodes, seed, rng);
  LearnedActor actor(agent);
  return evaluate_actor(actor, env, split, episodes, seed, rng);
}

std::unique_ptr<Actor> make_bandit_actor(const AgentSpec& agent, const EnvSpec& env) {
  if (env.name != "bandit") throw std::invalid_argument("UCB agents only run on bandits, not " + env.name);
  switch (agent.kind) {
    case AgentKind::Ucb: return std::make_unique<UcbActor>(env.arms);
    case AgentKind::SwUcb: return std::make_unique<UcbActor>(env.arms, agent.window, agent.ucb_xi);
    default: throw std::invalid_argument(std::string(to_string(agent.kind)) + " is not a bandit algorithm");
  }
}

std::uint64_t evaluation_seed(const EnvSpec& env, Split split) {
  return derive_seed(env.task_seed, {stream_id("evaluation"), stream_id(env.name), stream_id(to_string(split))});
}

}  // namespace metarl
