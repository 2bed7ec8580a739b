#include "metarl/agents.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace metarl {

std::string_view to_string(AgentKind kind) {
  switch (kind) {
    case AgentKind::Import: return "import";
    case AgentKind::Rnn: return "rnn";
    case AgentKind::Ti: return "ti";
    case AgentKind::Ts: return "ts";
    case AgentKind::Informed: return "informed";
    case AgentKind::Ucb: return "ucb";
    case AgentKind::SwUcb: return "sw_ucb";
  }
  return "?";
}

AgentKind agent_kind_from_string(std::string_view name) {
  if (name == "import" || name == "import_b0") return AgentKind::Import;
  if (name == "rnn") return AgentKind::Rnn;
  if (name == "ti") return AgentKind::Ti;
  if (name == "ts") return AgentKind::Ts;
  if (name == "informed") return AgentKind::Informed;
  if (name == "ucb") return AgentKind::Ucb;
  if (name == "sw_ucb" || name == "sw-ucb") return AgentKind::SwUcb;
  throw std::invalid_argument("unknown agent '" + std::string(name) + "'");
}

bool is_learned(AgentKind kind) { return kind != AgentKind::Ucb && kind != AgentKind::SwUcb; }

EnvShape shape_of(const Environment& env) {
  return {env.observation_size(), env.action_count(), env.task_size(), env.reward_in_observation(),
          env.default_belief()};
}

HistoryStep LearnedAgent::history_step(const StepInput&, const Tensor&) const {
  throw std::logic_error(std::string(to_string(kind())) + " agent has no history policy");
}

InformedStep LearnedAgent::informed_step(const Tensor&, const Tensor&) const {
  throw std::logic_error(std::string(to_string(kind())) + " agent has no informed policy");
}

Tensor LearnedAgent::state_input(const StepInput& in) const {
  const std::size_t b = in.observation.rows();
  if (in.observation.cols() != shape_.observation) {
    throw std::invalid_argument("observation shape " + shape_to_string(in.observation.shape()) + " does not match " +
                                std::to_string(shape_.observation) + " features");
  }
  if (shape_.reward_in_observation) return in.observation;
  if (in.prev_reward.size() != b) throw std::invalid_argument("prev_reward must have one entry per row");
  return concat({in.observation, Tensor::from({b, 1}, in.prev_reward)});
}

Tensor LearnedAgent::action_input(const StepInput& in) const {
  const std::size_t b = in.observation.rows();
  if (in.prev_action.size() != b) throw std::invalid_argument("prev_action must have one entry per row");
  std::vector<double> onehot(b * shape_.actions, 0.0);
  for (std::size_t r = 0; r < b; ++r) {
    const auto a = in.prev_action[r];
    if (a == kNoAction) continue;
    if (a >= shape_.actions) throw std::invalid_argument("prev_action out of range");
    onehot[r * shape_.actions + a] = 1.0;
  }
  return Tensor::from({b, shape_.actions}, std::move(onehot));
}

namespace {

std::size_t state_size(const EnvShape& shape) { return shape.observation + (shape.reward_in_observation ? 0 : 1); }

void check_task(const Tensor& task, std::size_t rows, std::size_t size) {
  if (!task.defined() || task.numel() == 0) throw std::invalid_argument("informed policy needs the task descriptor");
  if (task.rows() != rows || task.cols() != size) {
    throw std::invalid_argument("task shape " + shape_to_string(task.shape()) + " does not match [" +
                                std::to_string(rows) + ", " + std::to_string(size) + "]");
  }
}

}  // namespace

PolicyHead::PolicyHead(ParameterSet& params, const std::string& name, std::size_t in, std::size_t hidden,
                       std::size_t out, Rng& rng)
    : hidden_(params, name + ".hidden", in, hidden, Activation::Tanh, rng),
      out_(params, name + ".out", hidden, out, Activation::None, rng) {}

ImportAgent::ImportAgent(const AgentSpec& spec, const EnvShape& shape, std::uint64_t seed)
    : LearnedAgent(spec, shape) {
  Rng rng(seed);
  const auto hs = spec.hidden, hz = spec.task_hidden;
  encoder_ = HistoryEncoder(params_, "omega/encoder", state_size(shape), shape.actions, hs, rng);
  f_h_ = Linear(params_, "omega/f_h", hs, hz, Activation::Tanh, rng);
  f_mu_ = Linear(params_, "sigma/f_mu", shape.task, hz, Activation::Tanh, rng);
  phi_ = PolicyHead(params_, "theta/phi", shape.observation + hz, hs, shape.actions, rng);
  critic_ = PolicyHead(params_, "nu/critic", shape.observation + hz, hs, 1, rng);
}

Tensor ImportAgent::critic(const Tensor& observation, const Tensor& latent) const {
  return critic_(concat({observation, latent.detach()}));
}

HistoryStep ImportAgent::history_step(const StepInput& in, const Tensor& hidden) const {
  HistoryStep out;
  out.hidden = encoder_.step(state_input(in), action_input(in), hidden);
  out.embedding = f_h_(out.hidden);
  out.logits = phi(in.observation, out.embedding);
  out.value = critic(in.observation, out.embedding);
  return out;
}

InformedStep ImportAgent::informed_step(const Tensor& observation, const Tensor& task) const {
  check_task(task, observation.rows(), shape_.task);
  InformedStep out;
  out.embedding = f_mu_(task);
  out.logits = phi(observation, out.embedding);
  out.value = critic(observation, out.embedding);
  return out;
}

RnnAgent::RnnAgent(const AgentSpec& spec, const EnvShape& shape, std::uint64_t seed) : LearnedAgent(spec, shape) {
  if (spec.kind != AgentKind::Rnn && spec.kind != AgentKind::Ti) throw std::invalid_argument("RnnAgent needs rnn or ti");
  Rng rng(seed);
  const auto hs = spec.hidden;
  encoder_ = HistoryEncoder(params_, "omega/encoder", state_size(shape), shape.actions, hs, rng);
  policy_ = PolicyHead(params_, "theta/policy", hs, hs, shape.actions, rng);
  critic_ = PolicyHead(params_, "nu/critic", hs, hs, 1, rng);
  if (spec.kind == AgentKind::Ti) {
    belief_ = BeliefHead(params_, "belief/g", spec.belief.value_or(shape.belief), hs, shape.task, rng);
  }
}

HistoryStep RnnAgent::history_step(const StepInput& in, const Tensor& hidden) const {
  HistoryStep out;
  out.hidden = encoder_.step(state_input(in), action_input(in), hidden);
  out.embedding = out.hidden;
  out.logits = policy_(out.hidden);
  out.value = critic_(out.hidden.detach());
  if (has_belief()) out.belief = belief_(out.hidden);
  return out;
}

InformedAgent::InformedAgent(const AgentSpec& spec, const EnvShape& shape, std::uint64_t seed)
    : LearnedAgent(spec, shape) {
  if (spec.kind != AgentKind::Informed && spec.kind != AgentKind::Ts) {
    throw std::invalid_argument("InformedAgent needs informed or ts");
  }
  Rng rng(seed);
  const auto hs = spec.hidden, hz = spec.task_hidden;
  f_mu_ = Linear(params_, "sigma/f_mu", shape.task, hz, Activation::Tanh, rng);
  phi_ = PolicyHead(params_, "theta/phi", shape.observation + hz, hs, shape.actions, rng);
  critic_ = PolicyHead(params_, "nu/critic", shape.observation + hz, hs, 1, rng);
  if (spec.kind == AgentKind::Ts) {
    belief_encoder_ = HistoryEncoder(params_, "belief/encoder", state_size(shape), shape.actions, hs, rng);
    belief_ = BeliefHead(params_, "belief/head", spec.belief.value_or(shape.belief), hs, shape.task, rng);
  }
}

Tensor InformedAgent::initial_state(std::size_t batch) const {
  return has_belief() ? belief_encoder_.initial_state(batch) : Tensor::zeros({batch, 1});
}

HistoryStep InformedAgent::history_step(const StepInput& in, const Tensor& hidden) const {
  if (!has_belief()) return LearnedAgent::history_step(in, hidden);
  HistoryStep out;
  out.hidden = belief_encoder_.step(state_input(in), action_input(in), hidden);
  out.embedding = out.hidden;
  out.belief = belief_(out.hidden);
  return out;
}

InformedStep InformedAgent::informed_step(const Tensor& observation, const Tensor& task) const {
  check_task(task, observation.rows(), shape_.task);
  InformedStep out;
  out.embedding = f_mu_(task);
  const auto input = concat({observation, out.embedding});
  out.logits = phi_(input);
  out.value = critic_(concat({observation, out.embedding.detach()}));
  return out;
}

std::unique_ptr<LearnedAgent> make_learned_agent(const AgentSpec& spec, const EnvShape& shape, std::uint64_t seed) {
  switch (spec.kind) {
    case AgentKind::Import: return std::make_unique<ImportAgent>(spec, shape, seed);
    case AgentKind::Rnn:
    case AgentKind::Ti: return std::make_unique<RnnAgent>(spec, shape, seed);
    case AgentKind::Ts:
    case AgentKind::Informed: return std::make_unique<InformedAgent>(spec, shape, seed);
    default: break;
  }
  throw std::invalid_argument(std::string(to_string(spec.kind)) + " has no learned parameters");
}

Tensor auxiliary_distance(const Tensor& f_h, const Tensor& f_mu) {
  if (f_h.shape() != f_mu.shape()) {
    throw std::invalid_argument("auxiliary distance: shapes " + shape_to_string(f_h.shape()) + " and " +
                                shape_to_string(f_mu.shape()) + " differ");
  }
  return sum_cols(square(sub(f_h, f_mu.detach())));
}

Tensor belief_target(BeliefFamily family, const Tensor& task) {
  if (family != BeliefFamily::Beta) return task;
  std::vector<double> v(task.data().begin(), task.data().end());
  for (auto& x : v) x = std::clamp(x, kBetaTargetMargin, 1.0 - kBetaTargetMargin);
  return Tensor::from(task.shape(), std::move(v));
}

std::vector<std::size_t> sample_actions(const Tensor& logits, Rng& rng, std::vector<double>* log_probs,
                                        std::vector<double>* entropies) {
  const auto probs = softmax(logits.detach());
  const std::size_t b = probs.rows(), a = probs.cols();
  std::vector<std::size_t> actions(b);
  if (log_probs) log_probs->resize(b);
  if (entropies) entropies->resize(b);
  for (std::size_t r = 0; r < b; ++r) {
    auto row = probs.data().subspan(r * a, a);
    actions[r] = categorical_sample(row, rng);
    if (log_probs) (*log_probs)[r] = categorical_log_prob(row, actions[r]);
    if (entropies) (*entropies)[r] = categorical_entropy(row);
  }
  return actions;
}

namespace {

ActResult finish(const Tensor& logits, const Tensor& value, const Tensor& embedding, Rng& rng) {
  ActResult out;
  out.actions = sample_actions(logits, rng, &out.log_probs, &out.entropies);
  out.values.assign(value.data().begin(), value.data().end());
  out.embedding = embedding;
  return out;
}

}  // namespace

ActResult act_history(const LearnedAgent& agent, const StepInput& in, const Tensor& hidden, Rng& rng) {
  if (!agent.has_history_policy()) {
    throw std::logic_error(std::string(to_string(agent.kind())) + " agent has no history policy");
  }
  NoGradGuard guard;
  auto step = agent.history_step(in, hidden);
  auto out = finish(step.logits, step.value, step.embedding, rng);
  out.hidden = step.hidden;
  return out;
}

ActResult act_informed(const LearnedAgent& agent, const Tensor& observation, const Tensor& task, Rng& rng) {
  NoGradGuard guard;
  auto step = agent.informed_step(observation, task);
  return finish(step.logits, step.value, step.embedding, rng);
}

TsResult ts_act(const LearnedAgent& agent, const StepInput& in, const Tensor& hidden, Rng& rng) {
  if (agent.kind() != AgentKind::Ts) throw std::logic_error("ts_act needs a TS agent");
  NoGradGuard guard;
  TsResult out;
  auto step = agent.history_step(in, hidden);
  out.belief = step.belief;
  out.hidden = step.hidden;
  const std::size_t b = in.observation.rows(), d = agent.env_shape().task;
  std::vector<double> mu(b * d);
  for (std::size_t r = 0; r < b; ++r) {
    auto sample = belief_sample(step.belief, r, rng);
    std::copy(sample.begin(), sample.end(), mu.begin() + r * d);
  }
  out.sampled_task = Tensor::from({b, d}, std::move(mu));
  auto informed = agent.informed_step(in.observation, out.sampled_task);
  out.actions = sample_actions(informed.logits, rng);
  return out;
}

LearnedActor::LearnedActor(const LearnedAgent& agent) : agent_(agent) {
  if (!agent.has_history_policy() && agent.kind() != AgentKind::Ts) {
    throw std::invalid_argument(std::string(to_string(agent.kind())) + " agent cannot act without the task");
  }
}

std::vector<std::size_t> LearnedActor::act(const StepInput& in, Rng& rng) {
  if (agent_.kind() == AgentKind::Ts) {
    auto r = ts_act(agent_, in, hidden_, rng);
    hidden_ = r.hidden;
    return r.actions;
  }
  auto r = act_history(agent_, in, hidden_, rng);
  hidden_ = r.hidden;
  return r.actions;
}

double ucb_index(double mean, double count, double t) { return mean + std::sqrt(2.0 * std::log(t) / count); }

double sw_ucb_index(double mean, double count, double t, double window, double xi) {
  return mean + std::sqrt(xi * std::log(std::min(t, window)) / count);
}

UcbActor::UcbActor(std::size_t arms, std::size_t window, double xi) : arms_(arms), window_(window), xi_(xi) {
  if (arms < 1) throw std::invalid_argument("UCB needs at least one arm");
}

void UcbActor::reset(std::size_t batch) {
  rows_.assign(batch, Row{std::vector<double>(arms_, 0.0), std::vector<double>(arms_, 0.0), {}, 0});
}

void UcbActor::observe(std::size_t row, std::size_t arm, double reward) {
  auto& s = rows_.at(row);
  if (arm >= arms_) throw std::invalid_argument("UCB: arm out of range");
  s.counts[arm] += 1;
  s.sums[arm] += reward;
  ++s.pulls;
  if (window_ > 0) {
    s.recent.emplace_back(arm, reward);
    if (s.recent.size() > window_) {
      const auto [old_arm, old_reward] = s.recent.front();
      s.recent.pop_front();
      s.counts[old_arm] -= 1;
      s.sums[old_arm] -= old_reward;
    }
  }
}

std::size_t UcbActor::choose(std::size_t row) const {
  const auto& s = rows_.at(row);
  if (s.pulls < arms_) return s.pulls;  // warm start: decision t <= K pulls arm t-1
  const double t = static_cast<double>(s.pulls);
  std::size_t best = 0;
  double best_index = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < arms_; ++i) {
    double index;
    if (s.counts[i] <= 0.0) {
      index = std::numeric_limits<double>::infinity();
    } else if (window_ > 0) {
      index = sw_ucb_index(s.sums[i] / s.counts[i], s.counts[i], t, static_cast<double>(window_), xi_);
    } else {
      index = ucb_index(s.sums[i] / s.counts[i], s.counts[i], t);
    }
    if (index > best_index) {
      best_index = index;
      best = i;
    }
  }
  return best;
}

std::vector<std::size_t> UcbActor::act(const StepInput& in, Rng&) {
  const std::size_t b = in.prev_action.size();
  if (b != rows_.size()) throw std::invalid_argument("UCB: batch size changed without reset");
  std::vector<std::size_t> out(b);
  for (std::size_t r = 0; r < b; ++r) {
    if (in.prev_action[r] != kNoAction) observe(r, in.prev_action[r], in.prev_reward.at(r));
    out[r] = choose(r);
  }
  return out;
}

InformedActor::InformedActor(const LearnedAgent& agent) : agent_(agent) {
  if (!agent.has_informed_policy()) {
    throw std::invalid_argument(std::string(to_string(agent.kind())) + " agent has no informed policy");
  }
}

std::vector<std::size_t> InformedActor::act(const Tensor& observation, const Tensor& task, Rng& rng) const {
  return act_informed(agent_, observation, task, rng).actions;
}

}  // namespace metarl
