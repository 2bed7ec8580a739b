#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "metarl/environments.hpp"
#include "metarl/nets.hpp"
#include "metarl/parameters.hpp"
#include "metarl/rng.hpp"
#include "metarl/tensor.hpp"

namespace metarl {

enum class AgentKind { Import, Rnn, Ti, Ts, Informed, Ucb, SwUcb };

std::string_view to_string(AgentKind kind);
/// Accepts import, import_b0, rnn, ti, ts, informed, ucb, sw_ucb.
AgentKind agent_kind_from_string(std::string_view name);
bool is_learned(AgentKind kind);

struct AgentSpec {
  AgentKind kind = AgentKind::Import;
  std::size_t hidden = 32;       // hs
  std::size_t task_hidden = 32;  // hs_mu
  std::optional<BeliefFamily> belief;
  std::size_t window = 19;  // SW-UCB
  double ucb_xi = 2.0;
};

/// What an agent needs to know about its environment.
struct EnvShape {
  std::size_t observation = 0;
  std::size_t actions = 0;
  std::size_t task = 0;
  bool reward_in_observation = false;
  BeliefFamily belief = BeliefFamily::Gaussian;
};

EnvShape shape_of(const Environment& env);

inline constexpr std::size_t kNoAction = std::numeric_limits<std::size_t>::max();

/// Everything a deployed agent may read at one timestep, one row per parallel
/// episode. There is deliberately no task field.
struct StepInput {
  Tensor observation;                     // [B, observation]
  std::vector<std::size_t> prev_action;   // kNoAction at episode start
  std::vector<double> prev_reward;        // 0 at episode start
};

struct HistoryStep {
  Tensor logits;     // [B, A]; empty for TS
  Tensor value;      // [B, 1]; empty for TS
  Tensor embedding;  // f_H for IMPORT, z for RNN/TI
  BeliefParams belief;
  Tensor hidden;
};

struct InformedStep {
  Tensor logits;
  Tensor value;
  Tensor embedding;  // f_mu
};

/// A trainable agent. Parameter names are prefixed by role:
///   omega/  history encoder and f_H     sigma/  task embedding f_mu
///   theta/  policy head                 nu/     critic
///   belief/ belief head (TI) or belief network (TS)
class LearnedAgent {
 public:
  LearnedAgent(const AgentSpec& spec, const EnvShape& shape) : spec_(spec), shape_(shape) {}
  virtual ~LearnedAgent() = default;
  LearnedAgent(const LearnedAgent&) = delete;
  LearnedAgent& operator=(const LearnedAgent&) = delete;

  AgentKind kind() const { return spec_.kind; }
  const AgentSpec& spec() const { return spec_; }
  const EnvShape& env_shape() const { return shape_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  virtual bool has_history_policy() const { return false; }
  virtual bool has_informed_policy() const { return false; }
  virtual bool has_belief() const { return false; }
  virtual BeliefFamily belief_family() const { return shape_.belief; }

  virtual Tensor initial_state(std::size_t batch) const { return Tensor::zeros({batch, 1}); }
  virtual HistoryStep history_step(const StepInput& in, const Tensor& hidden) const;
  virtual InformedStep informed_step(const Tensor& observation, const Tensor& task) const;

  /// Encoder inputs: observation with the previous reward appended (unless the
  /// observation already is that reward), and the one-hot previous action.
  Tensor state_input(const StepInput& in) const;
  Tensor action_input(const StepInput& in) const;

 protected:
  AgentSpec spec_;
  EnvShape shape_;
  ParameterSet params_;
};

/// Two-layer categorical head: tanh layer of width hs, then logits.
class PolicyHead {
 public:
  PolicyHead() = default;
  PolicyHead(ParameterSet& params, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
             Rng& rng);
  Tensor operator()(const Tensor& x) const { return out_(hidden_(x)); }

 private:
  Linear hidden_;
  Linear out_;
};

class ImportAgent final : public LearnedAgent {
 public:
  ImportAgent(const AgentSpec& spec, const EnvShape& shape, std::uint64_t seed);

  bool has_history_policy() const override { return true; }
  bool has_informed_policy() const override { return true; }
  Tensor initial_state(std::size_t batch) const override { return encoder_.initial_state(batch); }
  HistoryStep history_step(const StepInput& in, const Tensor& hidden) const override;
  InformedStep informed_step(const Tensor& observation, const Tensor& task) const override;

  Tensor f_mu(const Tensor& task) const { return f_mu_(task); }
  /// The shared head applied to an arbitrary latent.
  Tensor phi(const Tensor& observation, const Tensor& latent) const { return phi_(concat({observation, latent})); }
  Tensor critic(const Tensor& observation, const Tensor& latent) const;

 private:
  HistoryEncoder encoder_;
  Linear f_h_;
  Linear f_mu_;
  PolicyHead phi_;
  PolicyHead critic_;
};

/// Recurrent A2C baseline; with a belief head g(z) it is the Task Inference
/// agent.
class RnnAgent final : public LearnedAgent {
 public:
  RnnAgent(const AgentSpec& spec, const EnvShape& shape, std::uint64_t seed);

  bool has_history_policy() const override { return true; }
  bool has_belief() const override { return spec_.kind == AgentKind::Ti; }
  BeliefFamily belief_family() const override { return belief_.family(); }
  Tensor initial_state(std::size_t batch) const override { return encoder_.initial_state(batch); }
  HistoryStep history_step(const StepInput& in, const Tensor& hidden) const override;

 private:
  HistoryEncoder encoder_;
  PolicyHead policy_;
  PolicyHead critic_;
  BeliefHead belief_;
};

/// Informed policy pi_mu(a | s, f_mu(mu)) with its own critic. The TS agent
/// adds a recurrent belief network over mu.
class InformedAgent final : public LearnedAgent {
 public:
  InformedAgent(const AgentSpec& spec, const EnvShape& shape, std::uint64_t seed);

  bool has_informed_policy() const override { return true; }
  bool has_belief() const override { return spec_.kind == AgentKind::Ts; }
  BeliefFamily belief_family() const override { return belief_.family(); }
  Tensor initial_state(std::size_t batch) const override;
  HistoryStep history_step(const StepInput& in, const Tensor& hidden) const override;
  InformedStep informed_step(const Tensor& observation, const Tensor& task) const override;

 private:
  Linear f_mu_;
  PolicyHead phi_;
  PolicyHead critic_;
  HistoryEncoder belief_encoder_;
  BeliefHead belief_;
};

std::unique_ptr<LearnedAgent> make_learned_agent(const AgentSpec& spec, const EnvShape& shape, std::uint64_t seed);

/// Sum over columns of (f_H - stopgrad(f_mu))^2 -> [B, 1].
Tensor auxiliary_distance(const Tensor& f_h, const Tensor& f_mu);

/// Beta targets are clamped into (0,1) by this margin so that bandit arms with
/// probability exactly 0 or 1 stay in the support.
inline constexpr double kBetaTargetMargin = 1e-6;
/// Maps a descriptor batch into the support of the belief family.
Tensor belief_target(BeliefFamily family, const Tensor& task);

struct ActResult {
  std::vector<std::size_t> actions;
  std::vector<double> log_probs;
  std::vector<double> entropies;
  std::vector<double> values;
  Tensor embedding;
  Tensor hidden;
};

/// Samples one action per row from softmax(logits).
std::vector<std::size_t> sample_actions(const Tensor& logits, Rng& rng, std::vector<double>* log_probs = nullptr,
                                        std::vector<double>* entropies = nullptr);

/// History-policy step for IMPORT / RNN / TI.
ActResult act_history(const LearnedAgent& agent, const StepInput& in, const Tensor& hidden, Rng& rng);
/// Informed-policy step; the task batch must be present.
ActResult act_informed(const LearnedAgent& agent, const Tensor& observation, const Tensor& task, Rng& rng);

struct TsResult {
  std::vector<std::size_t> actions;
  BeliefParams belief;
  Tensor sampled_task;
  Tensor hidden;
};
/// Thompson step: mu_hat ~ belief(history), redrawn every call, then
/// a ~ pi_mu(. | s, mu_hat).
TsResult ts_act(const LearnedAgent& agent, const StepInput& in, const Tensor& hidden, Rng& rng);

/// Test-time agent interface. Reads only the StepInput.
class Actor {
 public:
  virtual ~Actor() = default;
  virtual void reset(std::size_t batch) = 0;
  virtual std::vector<std::size_t> act(const StepInput& in, Rng& rng) = 0;
};

/// Wraps a learned agent for deployment (history policy, or TS sampling).
class LearnedActor final : public Actor {
 public:
  explicit LearnedActor(const LearnedAgent& agent);
  void reset(std::size_t batch) override { hidden_ = agent_.initial_state(batch); }
  std::vector<std::size_t> act(const StepInput& in, Rng& rng) override;

 private:
  const LearnedAgent& agent_;
  Tensor hidden_;
};

/// UCB1 index mean + sqrt(2 ln t / n).
double ucb_index(double mean, double count, double t);
/// Sliding-window index mean_W + sqrt(xi ln min(t, W) / n_W).
double sw_ucb_index(double mean, double count, double t, double window, double xi);

/// UCB1 and Sliding-Window UCB over the arms, learning only from
/// (prev_action, prev_reward). Arms are tried once each in index order first;
/// ties break to the lowest index.
class UcbActor final : public Actor {
 public:
  UcbActor(std::size_t arms, std::size_t window = 0, double xi = 2.0);
  void reset(std::size_t batch) override;
  std::vector<std::size_t> act(const StepInput& in, Rng& rng) override;

  std::size_t choose(std::size_t row) const;
  void observe(std::size_t row, std::size_t arm, double reward);

 private:
  struct Row {
    std::vector<double> counts;
    std::vector<double> sums;
    std::deque<std::pair<std::size_t, double>> recent;
    std::size_t pulls = 0;
  };
  std::size_t arms_;
  std::size_t window_;  // 0: plain UCB
  double xi_;
  std::vector<Row> rows_;
};

/// Privileged actor that reads the true descriptor; used only to evaluate the
/// informed policy.
class InformedActor {
 public:
  explicit InformedActor(const LearnedAgent& agent);
  std::vector<std::size_t> act(const Tensor& observation, const Tensor& task, Rng& rng) const;

 private:
  const LearnedAgent& agent_;
};

}  // namespace metarl
