#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metarl/nets.hpp"
#include "metarl/rng.hpp"

namespace metarl {

enum class Split { Train, Valid, Test };

std::string_view to_string(Split split);
Split split_from_string(std::string_view name);

struct StepResult {
  std::vector<double> observation;
  double reward = 0.0;
  bool done = false;
  /// Task descriptor that generated this transition. Empty when the split
  /// hides it (CartPole-task validation/test).
  std::vector<double> task;
};

/// Episodic environment driven by a non-stationary task process: after every
/// non-final transition the task is redrawn with probability rho. All
/// randomness (tasks, initial states, noise, rewards) comes from the
/// environment's own stream, so a seed plus an action sequence fixes the run.
class Environment {
 public:
  Environment(double rho, std::size_t horizon);
  virtual ~Environment() = default;

  void seed(std::uint64_t seed) { rng_.seed(seed); }
  /// Which task split this instance serves; informed (mu-reading) collection
  /// is only legal on the training split.
  Split split() const { return split_; }
  void set_split(Split split) { split_ = split; }
  std::vector<double> reset();
  StepResult step(std::size_t action);

  virtual std::string_view name() const = 0;
  virtual std::size_t observation_size() const = 0;
  virtual std::size_t action_count() const = 0;
  virtual std::size_t task_size() const = 0;
  virtual BeliefFamily default_belief() const = 0;
  /// True when the observation already is the previous reward (bandits).
  virtual bool reward_in_observation() const { return false; }
  virtual bool task_visible() const { return true; }

  /// Current descriptor; train-time channel only.
  std::vector<double> task() const;
  std::size_t horizon() const { return horizon_; }
  std::size_t elapsed() const { return t_; }
  bool episode_over() const { return done_; }
  std::size_t task_changes() const { return changes_; }
  double resample_probability() const { return rho_; }

 protected:
  struct Transition {
    std::vector<double> observation;
    double reward = 0.0;
    bool terminal = false;
  };

  virtual void draw_task(Rng& rng) = 0;
  virtual std::vector<double> descriptor() const = 0;
  virtual std::vector<double> start_episode(Rng& rng) = 0;
  virtual Transition transition(std::size_t action, Rng& rng) = 0;

  Rng rng_;

 private:
  Split split_ = Split::Train;
  double rho_;
  std::size_t horizon_;
  std::size_t t_ = 0;
  std::size_t changes_ = 0;
  bool started_ = false;
  bool done_ = false;
};

/// One arm uniformly at random gets mu_max, every other arm U[0, mu_min].
std::vector<double> bandit_sample_task(std::size_t arms, double mu_max, double mu_min, Rng& rng);

class BanditEnv final : public Environment {
 public:
  BanditEnv(std::size_t arms, double mu_max, double mu_min, double rho, std::size_t horizon = 100);

  std::string_view name() const override { return "bandit"; }
  std::size_t observation_size() const override { return 1; }
  std::size_t action_count() const override { return arms_; }
  std::size_t task_size() const override { return arms_; }
  BeliefFamily default_belief() const override { return BeliefFamily::Beta; }
  bool reward_in_observation() const override { return true; }

 protected:
  void draw_task(Rng& rng) override { mu_ = bandit_sample_task(arms_, mu_max_, mu_min_, rng); }
  std::vector<double> descriptor() const override { return mu_; }
  std::vector<double> start_episode(Rng&) override { return {0.0}; }
  Transition transition(std::size_t action, Rng& rng) override;

 private:
  std::size_t arms_;
  double mu_max_;
  double mu_min_;
  std::vector<double> mu_;
};

struct CartPolePhysics {
  double gravity = 9.8;
  double masscart = 1.0;
  double masspole = 0.1;
  double length = 0.5;  // half the pole length, as in the gym implementation
  double force_mag = 10.0;
};

/// Affine map of [-1,1]^5 onto the physical domains
/// gravity [4.8,14.8], cart mass [0.5,1.5], pole mass [0.01,0.19],
/// length [0.2,0.8], force [-10,10].
CartPolePhysics cartpole_physics(std::span<const double> normalized);

struct CartPoleAccel {
  double x = 0.0;
  double theta = 0.0;
};
CartPoleAccel cartpole_accelerations(const std::array<double, 4>& state, double force, const CartPolePhysics& p);

class CartPoleEnv : public Environment {
 public:
  static constexpr double kDt = 0.02;
  static constexpr double kXThreshold = 2.4;
  static constexpr double kThetaThreshold = 12.0 * 2.0 * 3.14159265358979323846 / 360.0;

  CartPoleEnv(double rho, std::size_t horizon = 100);

  std::string_view name() const override { return "cartpole"; }
  std::size_t observation_size() const override { return 4; }
  std::size_t action_count() const override { return 2; }
  std::size_t task_size() const override { return 5; }
  BeliefFamily default_belief() const override { return BeliefFamily::Gaussian; }

  const std::array<double, 4>& state() const { return state_; }
  void set_state(const std::array<double, 4>& state) { state_ = state; }
  const CartPolePhysics& physics() const { return physics_; }
  void set_physics(const CartPolePhysics& physics) { physics_ = physics; }

 protected:
  void draw_task(Rng& rng) override;
  std::vector<double> descriptor() const override { return mu_; }
  std::vector<double> start_episode(Rng& rng) override;
  Transition transition(std::size_t action, Rng& rng) override;

  std::array<double, 4> state_{};
  CartPolePhysics physics_;
  std::vector<double> mu_;
};

/// CartPole whose tasks come from fixed, pairwise-disjoint tables: R training
/// tasks, then validation and test tables. The descriptor is the one-hot task
/// id and is only exposed on the training split.
class CartPoleTaskEnv final : public CartPoleEnv {
 public:
  struct Tables {
    std::vector<std::vector<double>> train;
    std::vector<std::vector<double>> valid;
    std::vector<std::vector<double>> test;
  };
  /// Normalized physics vectors drawn from one stream seeded by `task_seed`;
  /// exact duplicates are rejected so the three tables never overlap.
  static Tables make_tables(std::size_t train_tasks, std::size_t heldout_tasks, std::uint64_t task_seed);

  CartPoleTaskEnv(std::size_t train_tasks, std::size_t heldout_tasks, std::uint64_t task_seed, Split split, double rho,
                  std::size_t horizon = 100);

  std::string_view name() const override { return "cartpole-task"; }
  std::size_t task_size() const override { return train_count_; }
  BeliefFamily default_belief() const override { return BeliefFamily::Multinomial; }
  bool task_visible() const override { return split() == Split::Train; }

  const std::vector<std::vector<double>>& table() const { return table_; }
  std::size_t task_index() const { return index_; }

 protected:
  void draw_task(Rng& rng) override;
  std::vector<double> descriptor() const override;

 private:
  std::size_t train_count_;
  std::vector<std::vector<double>> table_;
  std::size_t index_ = 0;
};

struct AcrobotParams {
  double l1 = 1.0;
  double l2 = 1.0;
  double m1 = 1.0;
  double m2 = 1.0;
  double max_vel1 = 4.0 * 3.14159265358979323846;
  double max_vel2 = 9.0 * 3.14159265358979323846;
  bool inverted = false;
};

/// Maps [-1,1]^7 onto l1, l2, m1, m2 in [0.5,1.5], max velocities in
/// [3pi,5pi] and [7pi,11pi], and the invert flag (descriptor > 0).
AcrobotParams acrobot_params(std::span<const double> normalized);

/// Time derivative of (theta1, theta2, dtheta1, dtheta2) under torque.
std::array<double, 4> acrobot_derivatives(const std::array<double, 4>& s, double torque, const AcrobotParams& p);

class AcrobotEnv final : public Environment {
 public:
  static constexpr double kDt = 0.2;

  AcrobotEnv(double rho, double torque_noise = 0.1, std::size_t horizon = 500);

  std::string_view name() const override { return "acrobot"; }
  std::size_t observation_size() const override { return 6; }
  std::size_t action_count() const override { return 3; }
  std::size_t task_size() const override { return 7; }
  BeliefFamily default_belief() const override { return BeliefFamily::Gaussian; }

  const std::array<double, 4>& state() const { return state_; }
  void set_state(const std::array<double, 4>& state) { state_ = state; }
  const AcrobotParams& params() const { return params_; }
  /// Applied torque of the most recent transition, noise included.
  double last_torque() const { return last_torque_; }

 protected:
  void draw_task(Rng& rng) override;
  std::vector<double> descriptor() const override { return mu_; }
  std::vector<double> start_episode(Rng& rng) override;
  Transition transition(std::size_t action, Rng& rng) override;

 private:
  std::vector<double> observe() const;

  double noise_;
  std::array<double, 4> state_{};
  AcrobotParams params_;
  std::vector<double> mu_;
  double last_torque_ = 0.0;
};

/// Two-goal grid maze. Positions live on an integer lattice with spacing 5/6
/// inside the [-6,6]^2 arena, so the paper's landmarks (0,-5), (0,0), (+-5,5)
/// sit at lattice points (0,-6), (0,0), (+-6,6).
class Maze2dEnv final : public Environment {
 public:
  enum Action : std::size_t { Forward = 0, TurnLeft = 1, TurnRight = 2 };
  static constexpr int kLimit = 7;
  static constexpr double kSpacing = 5.0 / 6.0;

  struct Pose {
    int x = 0;
    int y = 0;
    int heading = 0;  // 0:+y, 1:+x, 2:-y, 3:-x
    bool operator==(const Pose&) const = default;
  };
  struct Layout {
    Pose start;
    int sign_x = 0;
    int sign_y = 0;
  };
  static Layout layout(char scenario);
  static Pose move(const Pose& pose, std::size_t action);
  /// Lattice goal for descriptor mu: +1 to the right (+x), -1 to the left.
  static std::array<int, 2> goal(double mu);

  explicit Maze2dEnv(char scenario, std::size_t horizon = 100);

  std::string_view name() const override { return "maze2d"; }
  std::size_t observation_size() const override { return 7; }
  std::size_t action_count() const override { return 3; }
  std::size_t task_size() const override { return 1; }
  BeliefFamily default_belief() const override { return BeliefFamily::Bernoulli; }

  const Pose& pose() const { return pose_; }

 protected:
  void draw_task(Rng& rng) override { mu_ = uniform01(rng) < 0.5 ? -1.0 : 1.0; }
  std::vector<double> descriptor() const override { return {mu_}; }
  std::vector<double> start_episode(Rng& rng) override;
  Transition transition(std::size_t action, Rng& rng) override;

 private:
  std::vector<double> observe() const;

  Layout layout_;
  Pose pose_;
  double mu_ = 1.0;
};

struct EnvSpec {
  std::string name = "bandit";
  std::size_t arms = 5;
  double mu_max = 0.9;
  double mu_min = 0.1;
  double rho = 0.0;
  std::size_t horizon = 0;  // 0 selects the environment default
  std::size_t train_tasks = 10;
  std::size_t heldout_tasks = 100;
  std::uint64_t task_seed = 0;
  char scenario = 'A';
  double torque_noise = 0.1;
};

std::unique_ptr<Environment> make_environment(const EnvSpec& spec, Split split);

}  // namespace metarl
