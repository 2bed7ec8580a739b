#include <gtest/gtest.h>

#include <boost/math/distributions/binomial.hpp>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "support/maze_bfs.hpp"
#include "support/reference_dynamics.hpp"
#include "support/statistics.hpp"
#include "metarl/environments.hpp"

using namespace metarl;
using metarl::testing::chi_squared_critical;
using metarl::testing::pooled_chi_squared;

namespace {

std::vector<StepResult> rollout(Environment& env, std::uint64_t seed, const std::vector<std::size_t>& actions) {
  env.seed(seed);
  env.reset();
  std::vector<StepResult> out;
  for (auto a : actions) {
    out.push_back(env.step(a));
    if (out.back().done) break;
  }
  return out;
}

}  // namespace

TEST(Bandit, SampleTaskHasOneOptimalArm) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    auto mu = bandit_sample_task(5, 0.9, 0.1, rng);
    ASSERT_EQ(mu.size(), 5u);
    int best = 0;
    for (double m : mu) {
      if (m == 0.9) {
        ++best;
      } else {
        EXPECT_GE(m, 0.0);
        EXPECT_LE(m, 0.1);
      }
    }
    EXPECT_EQ(best, 1);
  }
}

TEST(Bandit, ZeroMuMinGivesZeroArms) {
  Rng rng(2);
  auto mu = bandit_sample_task(4, 0.9, 0.0, rng);
  int zeros = 0;
  for (double m : mu) zeros += m == 0.0;
  EXPECT_EQ(zeros, 3);
}

TEST(Bandit, InvalidParametersAreRejected) {
  Rng rng(3);
  EXPECT_THROW(bandit_sample_task(1, 0.9, 0.1, rng), std::invalid_argument);
  EXPECT_THROW(bandit_sample_task(5, 0.1, 0.9, rng), std::invalid_argument);
  EXPECT_THROW(bandit_sample_task(5, 1.2, 0.1, rng), std::invalid_argument);
  EXPECT_THROW(bandit_sample_task(5, 0.9, -0.1, rng), std::invalid_argument);
  BanditEnv env(5, 0.9, 0.1, 0.0);
  env.seed(1);
  env.reset();
  EXPECT_THROW(env.step(5), std::invalid_argument);
}

TEST(Bandit, OptimalArmPlacementIsUniform) {
  Rng rng(4);
  const int n = 10000;
  std::vector<double> counts(5, 0.0);
  for (int i = 0; i < n; ++i) {
    auto mu = bandit_sample_task(5, 0.9, 0.1, rng);
    for (std::size_t k = 0; k < 5; ++k) counts[k] += mu[k] == 0.9;
  }
  auto [stat, dof] = pooled_chi_squared(counts, std::vector<double>(5, n / 5.0));
  EXPECT_EQ(dof, 4);
  EXPECT_LT(stat, chi_squared_critical(dof, 0.01));
}

TEST(Bandit, CertainArmAlwaysPays) {
  BanditEnv env(3, 1.0, 0.5, 0.0);
  env.seed(5);
  env.reset();
  const auto mu = env.task();
  const auto best = static_cast<std::size_t>(std::find(mu.begin(), mu.end(), 1.0) - mu.begin());
  for (int t = 0; t < 100; ++t) {
    auto r = env.step(best);
    EXPECT_EQ(r.reward, 1.0);
    EXPECT_EQ(r.observation, std::vector<double>{1.0});
  }
}

TEST(Bandit, StationaryEpisodeKeepsTaskAndLastsHorizon) {
  BanditEnv env(5, 0.9, 0.1, 0.0);
  env.seed(6);
  auto obs = env.reset();
  EXPECT_EQ(obs, std::vector<double>{0.0});
  const auto mu = env.task();
  int steps = 0;
  for (bool done = false; !done; ++steps) {
    auto r = env.step(steps % 5);
    EXPECT_EQ(r.task, mu);
    EXPECT_TRUE(r.reward == 0.0 || r.reward == 1.0);
    done = r.done;
  }
  EXPECT_EQ(steps, 100);
  EXPECT_THROW(env.step(0), std::logic_error);
}

TEST(Bandit, ChangeCountsAreBinomial) {
  BanditEnv env(5, 0.9, 0.1, 0.05);
  const int episodes = 10000;
  std::vector<double> observed(100, 0.0);
  double total = 0;
  for (int e = 0; e < episodes; ++e) {
    env.seed(derive_seed(7, {static_cast<std::uint64_t>(e)}));
    env.reset();
    std::size_t changes = 0;
    auto prev = env.task();
    for (bool done = false; !done;) {
      auto r = env.step(0);
      done = r.done;
      if (!done && env.task() != prev) ++changes;
      prev = env.task();
    }
    EXPECT_EQ(changes, env.task_changes());
    observed[changes] += 1;
    total += changes;
  }
  EXPECT_NEAR(total / episodes, 99 * 0.05, 0.1);
  boost::math::binomial dist(99, 0.05);
  std::vector<double> expected(100);
  for (int k = 0; k < 100; ++k) expected[k] = episodes * boost::math::pdf(dist, k);
  auto [stat, dof] = pooled_chi_squared(observed, expected);
  EXPECT_LT(stat, chi_squared_critical(dof, 0.01)) << "dof " << dof;
}

TEST(CartPole, ZeroForceAtEquilibriumHasNoAcceleration) {
  CartPolePhysics p;
  p.force_mag = 0.0;
  auto acc = cartpole_accelerations({0, 0, 0, 0}, 0.0, p);
  EXPECT_EQ(acc.x, 0.0);
  EXPECT_EQ(acc.theta, 0.0);
}

TEST(CartPole, PhysicsMapsNormalizedCorners) {
  const std::vector<double> lo(5, -1.0), hi(5, 1.0);
  auto a = cartpole_physics(lo), b = cartpole_physics(hi);
  EXPECT_DOUBLE_EQ(a.gravity, 4.8);
  EXPECT_DOUBLE_EQ(b.gravity, 14.8);
  EXPECT_DOUBLE_EQ(a.masspole, 0.01);
  EXPECT_DOUBLE_EQ(b.length, 0.8);
  EXPECT_DOUBLE_EQ(a.force_mag, -10.0);
}

TEST(CartPole, RolloutMatchesIndependentIntegrator) {
  CartPoleEnv env(0.0, 100);
  env.seed(8);
  env.reset();
  const auto p = env.physics();
  auto s = env.state();
  double x = s[0], v = s[1], th = s[2], w = s[3];
  Rng actions(9);
  int steps = 0;
  for (; steps < 50; ++steps) {
    const std::size_t a = uniform01(actions) < 0.5 ? 0 : 1;
    const double f = a == 1 ? p.force_mag : -p.force_mag;
    const auto next = metarl::testing::cartpole_reference_step({x, v, th, w}, f, p);
    x = next[0], v = next[1], th = next[2], w = next[3];
    auto r = env.step(a);
    const auto& e = env.state();
    EXPECT_NEAR(e[0], x, 1e-9);
    EXPECT_NEAR(e[1], v, 1e-9);
    EXPECT_NEAR(e[2], th, 1e-9);
    EXPECT_NEAR(e[3], w, 1e-9);
    if (r.done) break;
  }
  EXPECT_GT(steps, 0);
}

TEST(CartPole, LongRolloutWithoutTerminationMatchesIntegrator) {
  // A horizon long enough for 50 steps, driven from rest with a balancing
  // bang-bang controller so the pole stays up for the whole comparison.
  CartPoleEnv env(0.0, 200);
  env.seed(10);
  env.reset();
  env.set_state({0, 0, 0.01, 0});
  const auto p = env.physics();
  double x = 0, v = 0, th = 0.01, w = 0;
  int steps = 0;
  for (; steps < 50; ++steps) {
    const bool push_right = (th + 0.5 * w > 0) == (p.force_mag > 0);
    const std::size_t a = push_right ? 1 : 0;
    const double f = a == 1 ? p.force_mag : -p.force_mag;
    const auto next = metarl::testing::cartpole_reference_step({x, v, th, w}, f, p);
    x = next[0], v = next[1], th = next[2], w = next[3];
    auto r = env.step(a);
    const auto& e = env.state();
    ASSERT_NEAR(e[0], x, 1e-9);
    ASSERT_NEAR(e[2], th, 1e-9);
    ASSERT_NEAR(e[3], w, 1e-9);
    if (r.done) break;
  }
  EXPECT_EQ(steps, 50);
}

TEST(CartPole, AlternatingOutlivesConstantAction) {
  CartPoleEnv env(0.0, 100);
  auto survive = [&](bool alternate, std::uint64_t seed) {
    env.seed(seed);
    env.reset();
    env.set_physics(CartPolePhysics{});
    int t = 0;
    for (bool done = false; !done; ++t) done = env.step(alternate ? t % 2 : 1).done;
    return t;
  };
  double alt = 0, con = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    alt += survive(true, s);
    con += survive(false, s);
  }
  EXPECT_GT(alt, con);
}

TEST(CartPole, RewardsAreOneAndObservationIsState) {
  CartPoleEnv env(0.1, 100);
  env.seed(11);
  auto obs = env.reset();
  EXPECT_EQ(obs.size(), 4u);
  for (double v : obs) EXPECT_LE(std::abs(v), 0.05);
  for (bool done = false; !done;) {
    auto r = env.step(1);
    EXPECT_EQ(r.reward, 1.0);
    EXPECT_EQ(r.observation.size(), 4u);
    for (double m : r.task) {
      EXPECT_GE(m, -1.0);
      EXPECT_LE(m, 1.0);
    }
    done = r.done;
  }
}

TEST(CartPoleTask, TrainDescriptorIsOneHot) {
  CartPoleTaskEnv env(10, 100, 0, Split::Train, 0.0);
  env.seed(12);
  env.reset();
  auto mu = env.task();
  ASSERT_EQ(mu.size(), 10u);
  double total = 0;
  for (double v : mu) {
    EXPECT_TRUE(v == 0.0 || v == 1.0);
    total += v;
  }
  EXPECT_EQ(total, 1.0);
  EXPECT_EQ(mu[env.task_index()], 1.0);
}

TEST(CartPoleTask, HeldOutSplitsHideTheDescriptor) {
  CartPoleTaskEnv env(10, 100, 0, Split::Valid, 0.0);
  env.seed(13);
  env.reset();
  EXPECT_THROW(env.task(), std::logic_error);
  EXPECT_TRUE(env.step(0).task.empty());
  EXPECT_EQ(env.table().size(), 100u);
}

TEST(CartPoleTask, TablesAreDeterministicAndDisjoint) {
  auto a = CartPoleTaskEnv::make_tables(10, 100, 42);
  auto b = CartPoleTaskEnv::make_tables(10, 100, 42);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.valid, b.valid);
  EXPECT_EQ(a.test, b.test);
  std::set<std::vector<double>> train(a.train.begin(), a.train.end());
  std::set<std::vector<double>> valid(a.valid.begin(), a.valid.end());
  for (const auto& v : a.valid) EXPECT_FALSE(train.count(v));
  for (const auto& v : a.test) {
    EXPECT_FALSE(train.count(v));
    EXPECT_FALSE(valid.count(v));
  }
  EXPECT_NE(CartPoleTaskEnv::make_tables(10, 100, 43).train, a.train);
  EXPECT_THROW(CartPoleTaskEnv::make_tables(0, 100, 1), std::invalid_argument);
}

TEST(CartPoleTask, PhysicsFollowsTheTable) {
  CartPoleTaskEnv env(10, 100, 3, Split::Test, 0.0);
  env.seed(14);
  env.reset();
  const auto p = cartpole_physics(env.table()[env.task_index()]);
  EXPECT_EQ(env.physics().gravity, p.gravity);
  EXPECT_EQ(env.physics().force_mag, p.force_mag);
}

TEST(Acrobot, InversionMirrorsActions) {
  AcrobotEnv a(0.0);
  a.seed(15);
  a.reset();
  auto p = a.params();
  auto q = p;
  p.inverted = true;
  q.inverted = false;
  std::array<double, 4> s{0.3, -0.2, 0.5, 1.0};
  for (int action : {-1, 0, 1}) {
    const double noise = 0.037;
    const double tp = (p.inverted ? -action : action) + noise;
    const double tq = (q.inverted ? -(-action) : -action) + noise;
    EXPECT_EQ(tp, tq);
    EXPECT_EQ(acrobot_derivatives(s, tp, p), acrobot_derivatives(s, tq, q));
  }
}

TEST(Acrobot, InvertedEnvironmentAppliesNegatedTorque) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    AcrobotEnv env(0.0, 0.0);
    env.seed(seed);
    env.reset();
    env.step(2);
    EXPECT_EQ(env.last_torque(), env.params().inverted ? -1.0 : 1.0);
  }
}

TEST(Acrobot, HangingRestIsAnEquilibrium) {
  AcrobotEnv env(0.0, 0.0);
  env.seed(16);
  env.reset();
  env.set_state({0, 0, 0, 0});
  for (int t = 0; t < 10; ++t) {
    auto r = env.step(1);
    EXPECT_EQ(r.reward, -1.0);
    for (double v : env.state()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Acrobot, RolloutMatchesIndependentRk4) {
  AcrobotEnv env(0.0, 0.1);
  env.seed(17);
  env.reset();
  const auto p = env.params();
  auto s = env.state();
  Rng actions(18);
  for (int t = 0; t < 20; ++t) {
    const std::size_t a = std::uniform_int_distribution<std::size_t>(0, 2)(actions);
    env.step(a);
    const double tau = env.last_torque();
    const double nominal = p.inverted ? 1.0 - a : a - 1.0;
    EXPECT_LE(std::abs(tau - nominal), 0.1);
    s = metarl::testing::acrobot_reference_step(s, tau, p);
    for (int i = 0; i < 4; ++i) ASSERT_NEAR(env.state()[i], s[i], 1e-9) << "t=" << t << " i=" << i;
  }
}

TEST(Acrobot, RewardsAndObservation) {
  AcrobotEnv env(0.05);
  env.seed(19);
  auto obs = env.reset();
  ASSERT_EQ(obs.size(), 6u);
  EXPECT_NEAR(obs[0] * obs[0] + obs[1] * obs[1], 1.0, 1e-12);
  int steps = 0;
  for (bool done = false; !done; ++steps) {
    auto r = env.step(steps % 3);
    done = r.done;
    if (done && steps + 1 < 500) {
      EXPECT_EQ(r.reward, 0.0);
    } else {
      EXPECT_EQ(r.reward, -1.0);
    }
    EXPECT_EQ(r.task.size(), 7u);
  }
  EXPECT_LE(steps, 500);
}

TEST(Maze2d, WallBlocksForwardMotion) {
  Maze2dEnv::Pose p{0, 7, 0};
  auto n = Maze2dEnv::move(p, Maze2dEnv::Forward);
  EXPECT_EQ(n, p);
  Maze2dEnv env('A');
  env.seed(20);
  env.reset();
  env.step(Maze2dEnv::TurnRight);
  env.step(Maze2dEnv::TurnRight);  // facing -y from (0,-6)
  for (int i = 0; i < 3; ++i) {
    auto r = env.step(Maze2dEnv::Forward);
    EXPECT_EQ(r.reward, 0.0);
  }
  EXPECT_EQ(env.pose().y, -7);
  env.step(Maze2dEnv::Forward);
  EXPECT_EQ(env.pose().y, -7);
}

TEST(Maze2d, ScenarioAShortestSolutionIsNineteen) {
  EXPECT_EQ(metarl::testing::maze_shortest_solution('A'), 19);
}

TEST(Maze2d, ScenarioBShortestSolution) {
  // Frozen from the BFS oracle: 2 turns, 6 down to the sign, 1 turn, 6 across,
  // 1 turn, 12 up.
  EXPECT_EQ(metarl::testing::maze_shortest_solution('B'), 28);
}

TEST(Maze2d, ScriptedPathSolvesBothTasks) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Maze2dEnv env('A');
    env.seed(seed);
    env.reset();
    double sign = 0;
    for (int i = 0; i < 6; ++i) sign = env.step(Maze2dEnv::Forward).observation[6];
    ASSERT_NE(sign, 0.0);
    EXPECT_EQ(sign, env.task()[0]);
    StepResult r;
    for (int i = 0; i < 6; ++i) {
      r = env.step(Maze2dEnv::Forward);
      EXPECT_EQ(r.observation[6], 0.0);
    }
    env.step(sign > 0 ? Maze2dEnv::TurnRight : Maze2dEnv::TurnLeft);
    for (int i = 0; i < 6; ++i) r = env.step(Maze2dEnv::Forward);
    EXPECT_TRUE(r.done);
    EXPECT_EQ(r.reward, 1.0);
    EXPECT_EQ(env.elapsed(), 19u);
  }
}

TEST(Maze2d, WrongGoalAndTruncation) {
  Maze2dEnv env('A');
  env.seed(21);
  env.reset();
  const double mu = env.task()[0];
  for (int i = 0; i < 12; ++i) env.step(Maze2dEnv::Forward);
  env.step(mu > 0 ? Maze2dEnv::TurnLeft : Maze2dEnv::TurnRight);
  StepResult r;
  for (int i = 0; i < 6; ++i) r = env.step(Maze2dEnv::Forward);
  EXPECT_TRUE(r.done);
  EXPECT_EQ(r.reward, -1.0);

  env.reset();
  int steps = 0;
  for (bool done = false; !done; ++steps) {
    r = env.step(Maze2dEnv::TurnLeft);
    EXPECT_EQ(r.reward, 0.0);
    done = r.done;
  }
  EXPECT_EQ(steps, 100);
}

TEST(Maze2d, ObservationLayout) {
  Maze2dEnv env('B');
  env.seed(22);
  auto obs = env.reset();
  ASSERT_EQ(obs.size(), 7u);
  EXPECT_EQ(obs[0], 0.0);
  EXPECT_EQ(obs[1], 0.0);
  EXPECT_EQ(obs[2], 1.0);
  EXPECT_EQ(obs[6], 0.0);
  EXPECT_THROW(Maze2dEnv('C'), std::invalid_argument);
  EXPECT_THROW(env.step(3), std::invalid_argument);
}

TEST(Environments, ReplayIsDeterministic) {
  for (const char* name : {"bandit", "cartpole", "cartpole-task", "acrobot", "maze2d"}) {
    EnvSpec spec;
    spec.name = name;
    spec.rho = spec.name == "maze2d" ? 0.0 : 0.1;
    auto env = make_environment(spec, Split::Train);
    Rng rng(23);
    std::vector<std::size_t> actions(500);
    for (auto& a : actions) a = std::uniform_int_distribution<std::size_t>(0, env->action_count() - 1)(rng);
    auto first = rollout(*env, 99, actions);
    auto second = rollout(*env, 99, actions);
    ASSERT_EQ(first.size(), second.size()) << name;
    for (std::size_t i = 0; i < first.size(); ++i) {
      EXPECT_EQ(first[i].observation, second[i].observation) << name;
      EXPECT_EQ(first[i].reward, second[i].reward) << name;
      EXPECT_EQ(first[i].task, second[i].task) << name;
      EXPECT_EQ(first[i].done, second[i].done) << name;
    }
    EXPECT_TRUE(first.back().done) << name;
    for (std::size_t i = 0; i + 1 < first.size(); ++i) EXPECT_FALSE(first[i].done) << name;
  }
}

TEST(Environments, FactoryRejectsUnknownAndInvalidSpecs) {
  EnvSpec spec;
  spec.name = "pendulum";
  EXPECT_THROW(make_environment(spec, Split::Train), std::invalid_argument);
  spec.name = "maze2d";
  spec.rho = 0.1;
  EXPECT_THROW(make_environment(spec, Split::Train), std::invalid_argument);
  spec.name = "bandit";
  spec.rho = 1.5;
  EXPECT_THROW(make_environment(spec, Split::Train), std::invalid_argument);
  EXPECT_EQ(split_from_string("valid"), Split::Valid);
  EXPECT_THROW(split_from_string("holdout"), std::invalid_argument);
}

TEST(Environments, SizesMatchObservations) {
  for (const char* name : {"bandit", "cartpole", "cartpole-task", "acrobot", "maze2d"}) {
    EnvSpec spec;
    spec.name = name;
    auto env = make_environment(spec, Split::Train);
    env->seed(24);
    EXPECT_EQ(env->reset().size(), env->observation_size()) << name;
    auto r = env->step(0);
    EXPECT_EQ(r.observation.size(), env->observation_size()) << name;
    EXPECT_EQ(r.task.size(), env->task_size()) << name;
  }
}
