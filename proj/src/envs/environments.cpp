#include "metarl/environments.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

namespace metarl {

namespace {

double from_unit(double v, double lo, double hi) { return lo + 0.5 * (v + 1.0) * (hi - lo); }

double wrap_angle(double x) {
  // Same convention as gym's wrap(): result in [-pi, pi).
  const double two_pi = 2.0 * std::numbers::pi;
  while (x > std::numbers::pi) x -= two_pi;
  while (x < -std::numbers::pi) x += two_pi;
  return x;
}

void check_action(std::size_t action, std::size_t count) {
  if (action >= count) {
    throw std::invalid_argument("action " + std::to_string(action) + " out of range [0, " + std::to_string(count) + ")");
  }
}

std::vector<double> uniform_box(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = 2.0 * uniform01(rng) - 1.0;
  return v;
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "valid" || name == "validation") return Split::Valid;
  if (name == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

Environment::Environment(double rho, std::size_t horizon) : rho_(rho), horizon_(horizon) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("resample probability must lie in [0, 1]");
  if (horizon == 0) throw std::invalid_argument("horizon must be positive");
}

std::vector<double> Environment::reset() {
  t_ = 0;
  changes_ = 0;
  started_ = true;
  done_ = false;
  draw_task(rng_);
  return start_episode(rng_);
}

std::vector<double> Environment::task() const {
  if (!task_visible()) throw std::logic_error(std::string(name()) + ": task descriptor is hidden on this split");
  return descriptor();
}

StepResult Environment::step(std::size_t action) {
  if (!started_ || done_) throw std::logic_error(std::string(name()) + ": step called outside an episode");
  check_action(action, action_count());
  StepResult out;
  if (task_visible()) out.task = descriptor();
  Transition tr = transition(action, rng_);
  ++t_;
  out.observation = std::move(tr.observation);
  out.reward = tr.reward;
  out.done = tr.terminal || t_ >= horizon_;
  done_ = out.done;
  if (!out.done && rho_ > 0.0 && uniform01(rng_) < rho_) {
    draw_task(rng_);
    ++changes_;
  }
  return out;
}

std::vector<double> bandit_sample_task(std::size_t arms, double mu_max, double mu_min, Rng& rng) {
  if (arms < 2) throw std::invalid_argument("bandit needs at least 2 arms");
  if (!(mu_min >= 0.0 && mu_min <= mu_max && mu_max <= 1.0)) {
    throw std::invalid_argument("bandit requires 0 <= mu_min <= mu_max <= 1");
  }
  std::vector<double> mu(arms);
  const auto best = std::uniform_int_distribution<std::size_t>(0, arms - 1)(rng);
  for (std::size_t i = 0; i < arms; ++i) mu[i] = i == best ? mu_max : mu_min * uniform01(rng);
  return mu;
}

BanditEnv::BanditEnv(std::size_t arms, double mu_max, double mu_min, double rho, std::size_t horizon)
    : Environment(rho, horizon), arms_(arms), mu_max_(mu_max), mu_min_(mu_min) {
  Rng probe(0);
  bandit_sample_task(arms, mu_max, mu_min, probe);  // validates the ranges
}

Environment::Transition BanditEnv::transition(std::size_t action, Rng& rng) {
  const double r = uniform01(rng) < mu_[action] ? 1.0 : 0.0;
  return {{r}, r, false};
}

CartPolePhysics cartpole_physics(std::span<const double> v) {
  if (v.size() != 5) throw std::invalid_argument("cartpole descriptor must have 5 entries");
  return {from_unit(v[0], 4.8, 14.8), from_unit(v[1], 0.5, 1.5), from_unit(v[2], 0.01, 0.19),
          from_unit(v[3], 0.2, 0.8), from_unit(v[4], -10.0, 10.0)};
}

CartPoleAccel cartpole_accelerations(const std::array<double, 4>& s, double force, const CartPolePhysics& p) {
  const double total_mass = p.masspole + p.masscart;
  const double polemass_length = p.masspole * p.length;
  const double costheta = std::cos(s[2]);
  const double sintheta = std::sin(s[2]);
  const double temp = (force + polemass_length * s[3] * s[3] * sintheta) / total_mass;
  const double thetaacc =
      (p.gravity * sintheta - costheta * temp) / (p.length * (4.0 / 3.0 - p.masspole * costheta * costheta / total_mass));
  const double xacc = temp - polemass_length * thetaacc * costheta / total_mass;
  return {xacc, thetaacc};
}

CartPoleEnv::CartPoleEnv(double rho, std::size_t horizon) : Environment(rho, horizon) {}

void CartPoleEnv::draw_task(Rng& rng) {
  mu_ = uniform_box(5, rng);
  physics_ = cartpole_physics(mu_);
}

std::vector<double> CartPoleEnv::start_episode(Rng& rng) {
  for (auto& x : state_) x = 0.1 * uniform01(rng) - 0.05;
  return {state_.begin(), state_.end()};
}

Environment::Transition CartPoleEnv::transition(std::size_t action, Rng&) {
  const double force = action == 1 ? physics_.force_mag : -physics_.force_mag;
  const auto acc = cartpole_accelerations(state_, force, physics_);
  auto& [x, x_dot, theta, theta_dot] = state_;
  x += kDt * x_dot;
  x_dot += kDt * acc.x;
  theta += kDt * theta_dot;
  theta_dot += kDt * acc.theta;
  const bool terminal = x < -kXThreshold || x > kXThreshold || theta < -kThetaThreshold || theta > kThetaThreshold;
  return {{state_.begin(), state_.end()}, 1.0, terminal};
}

CartPoleTaskEnv::Tables CartPoleTaskEnv::make_tables(std::size_t train_tasks, std::size_t heldout_tasks,
                                                     std::uint64_t task_seed) {
  if (train_tasks == 0 || heldout_tasks == 0) throw std::invalid_argument("cartpole-task needs non-empty task tables");
  Rng rng(derive_seed(task_seed, {stream_id("cartpole-task")}));
  std::set<std::vector<double>> seen;
  auto fill = [&](std::size_t n) {
    std::vector<std::vector<double>> out;
    while (out.size() < n) {
      auto v = uniform_box(5, rng);
      if (seen.insert(v).second) out.push_back(std::move(v));
    }
    return out;
  };
  Tables t;
  t.train = fill(train_tasks);
  t.valid = fill(heldout_tasks);
  t.test = fill(heldout_tasks);
  return t;
}

CartPoleTaskEnv::CartPoleTaskEnv(std::size_t train_tasks, std::size_t heldout_tasks, std::uint64_t task_seed,
                                 Split split, double rho, std::size_t horizon)
    : CartPoleEnv(rho, horizon), train_count_(train_tasks) {
  set_split(split);
  auto tables = make_tables(train_tasks, heldout_tasks, task_seed);
  switch (split) {
    case Split::Train: table_ = std::move(tables.train); break;
    case Split::Valid: table_ = std::move(tables.valid); break;
    case Split::Test: table_ = std::move(tables.test); break;
  }
}

void CartPoleTaskEnv::draw_task(Rng& rng) {
  index_ = std::uniform_int_distribution<std::size_t>(0, table_.size() - 1)(rng);
  mu_ = table_[index_];
  physics_ = cartpole_physics(mu_);
}

std::vector<double> CartPoleTaskEnv::descriptor() const {
  std::vector<double> onehot(train_count_, 0.0);
  onehot[index_] = 1.0;
  return onehot;
}

AcrobotParams acrobot_params(std::span<const double> v) {
  if (v.size() != 7) throw std::invalid_argument("acrobot descriptor must have 7 entries");
  const double pi = std::numbers::pi;
  return {from_unit(v[0], 0.5, 1.5), from_unit(v[1], 0.5, 1.5), from_unit(v[2], 0.5, 1.5), from_unit(v[3], 0.5, 1.5),
          from_unit(v[4], 3 * pi, 5 * pi), from_unit(v[5], 7 * pi, 11 * pi), v[6] > 0.0};
}

std::array<double, 4> acrobot_derivatives(const std::array<double, 4>& s, double a, const AcrobotParams& p) {
  // "Book" dynamics of the gym implementation with centres of mass at l/2 and
  // unit moments of inertia.
  const double m1 = p.m1, m2 = p.m2, l1 = p.l1;
  const double lc1 = 0.5 * p.l1, lc2 = 0.5 * p.l2;
  const double i1 = 1.0, i2 = 1.0, g = 9.8;
  const double theta1 = s[0], theta2 = s[1], dtheta1 = s[2], dtheta2 = s[3];
  const double d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2 * l1 * lc2 * std::cos(theta2)) + i1 + i2;
  const double d2 = m2 * (lc2 * lc2 + l1 * lc2 * std::cos(theta2)) + i2;
  const double phi2 = m2 * lc2 * g * std::sin(theta1 + theta2);
  const double phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * std::sin(theta2) -
                      2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * std::sin(theta2) +
                      (m1 * lc1 + m2 * l1) * g * std::sin(theta1) + phi2;
  const double ddtheta2 = (a + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * std::sin(theta2) - phi2) /
                          (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
  const double ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
  return {dtheta1, dtheta2, ddtheta1, ddtheta2};
}

AcrobotEnv::AcrobotEnv(double rho, double torque_noise, std::size_t horizon)
    : Environment(rho, horizon), noise_(torque_noise) {
  if (!(torque_noise >= 0.0)) throw std::invalid_argument("torque noise must be non-negative");
}

void AcrobotEnv::draw_task(Rng& rng) {
  mu_ = uniform_box(6, rng);
  mu_.push_back(uniform01(rng) < 0.5 ? -1.0 : 1.0);
  params_ = acrobot_params(mu_);
}

std::vector<double> AcrobotEnv::start_episode(Rng& rng) {
  for (auto& x : state_) x = 0.2 * uniform01(rng) - 0.1;
  return observe();
}

std::vector<double> AcrobotEnv::observe() const {
  const auto& s = state_;
  return {std::cos(s[0]), std::sin(s[0]), std::cos(s[1]), std::sin(s[1]), s[2], s[3]};
}

Environment::Transition AcrobotEnv::transition(std::size_t action, Rng& rng) {
  double torque = static_cast<double>(action) - 1.0;
  if (params_.inverted) torque = -torque;
  if (noise_ > 0.0) torque += noise_ * (2.0 * uniform01(rng) - 1.0);
  last_torque_ = torque;

  // One classical RK4 step over dt with the torque held constant.
  const auto& s = state_;
  auto shifted = [&](const std::array<double, 4>& k, double h) {
    return std::array<double, 4>{s[0] + h * k[0], s[1] + h * k[1], s[2] + h * k[2], s[3] + h * k[3]};
  };
  const double dt = kDt;
  const auto k1 = acrobot_derivatives(s, torque, params_);
  const auto k2 = acrobot_derivatives(shifted(k1, dt / 2), torque, params_);
  const auto k3 = acrobot_derivatives(shifted(k2, dt / 2), torque, params_);
  const auto k4 = acrobot_derivatives(shifted(k3, dt), torque, params_);
  std::array<double, 4> ns;
  for (int i = 0; i < 4; ++i) ns[i] = s[i] + dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);

  ns[0] = wrap_angle(ns[0]);
  ns[1] = wrap_angle(ns[1]);
  ns[2] = std::clamp(ns[2], -params_.max_vel1, params_.max_vel1);
  ns[3] = std::clamp(ns[3], -params_.max_vel2, params_.max_vel2);
  state_ = ns;
  const bool terminal = -std::cos(ns[0]) - std::cos(ns[1] + ns[0]) > 1.0;
  return {observe(), terminal ? 0.0 : -1.0, terminal};
}

Maze2dEnv::Layout Maze2dEnv::layout(char scenario) {
  switch (scenario) {
    case 'A':
    case 'a': return {{0, -6, 0}, 0, 0};
    case 'B':
    case 'b': return {{0, 0, 0}, 0, -6};
  }
  throw std::invalid_argument(std::string("unknown maze scenario '") + scenario + "'");
}

Maze2dEnv::Pose Maze2dEnv::move(const Pose& pose, std::size_t action) {
  Pose next = pose;
  switch (action) {
    case Forward: {
      static constexpr int dx[4] = {0, 1, 0, -1};
      static constexpr int dy[4] = {1, 0, -1, 0};
      const int x = pose.x + dx[pose.heading], y = pose.y + dy[pose.heading];
      if (std::abs(x) <= kLimit && std::abs(y) <= kLimit) {
        next.x = x;
        next.y = y;
      }
      break;
    }
    case TurnLeft: next.heading = (pose.heading + 3) % 4; break;
    case TurnRight: next.heading = (pose.heading + 1) % 4; break;
    default: check_action(action, 3);
  }
  return next;
}

std::array<int, 2> Maze2dEnv::goal(double mu) { return {mu > 0.0 ? 6 : -6, 6}; }

Maze2dEnv::Maze2dEnv(char scenario, std::size_t horizon) : Environment(0.0, horizon), layout_(layout(scenario)) {}

std::vector<double> Maze2dEnv::start_episode(Rng&) {
  pose_ = layout_.start;
  return observe();
}

std::vector<double> Maze2dEnv::observe() const {
  std::vector<double> obs(7, 0.0);
  obs[0] = pose_.x * kSpacing / 6.0;
  obs[1] = pose_.y * kSpacing / 6.0;
  obs[2 + pose_.heading] = 1.0;
  if (pose_.x == layout_.sign_x && pose_.y == layout_.sign_y) obs[6] = mu_;
  return obs;
}

Environment::Transition Maze2dEnv::transition(std::size_t action, Rng&) {
  pose_ = move(pose_, action);
  const auto good = goal(mu_), bad = goal(-mu_);
  double reward = 0.0;
  bool terminal = false;
  if (pose_.x == good[0] && pose_.y == good[1]) {
    reward = 1.0;
    terminal = true;
  } else if (pose_.x == bad[0] && pose_.y == bad[1]) {
    reward = -1.0;
    terminal = true;
  }
  return {observe(), reward, terminal};
}

namespace {

std::unique_ptr<Environment> make_environment_impl(const EnvSpec& spec, Split split) {
  auto horizon = [&](std::size_t fallback) { return spec.horizon ? spec.horizon : fallback; };
  if (spec.name == "bandit") {
    return std::make_unique<BanditEnv>(spec.arms, spec.mu_max, spec.mu_min, spec.rho, horizon(100));
  }
  if (spec.name == "cartpole") return std::make_unique<CartPoleEnv>(spec.rho, horizon(100));
  if (spec.name == "cartpole-task") {
    return std::make_unique<CartPoleTaskEnv>(spec.train_tasks, spec.heldout_tasks, spec.task_seed, split, spec.rho,
                                             horizon(100));
  }
  if (spec.name == "acrobot") return std::make_unique<AcrobotEnv>(spec.rho, spec.torque_noise, horizon(500));
  if (spec.name == "maze2d") {
    if (spec.rho != 0.0) throw std::invalid_argument("maze2d draws its task once per episode; rho must be 0");
    return std::make_unique<Maze2dEnv>(spec.scenario, horizon(100));
  }
  throw std::invalid_argument("unknown environment '" + spec.name + "'");
}

}  // namespace

std::unique_ptr<Environment> make_environment(const EnvSpec& spec, Split split) {
  auto env = make_environment_impl(spec, split);
  env->set_split(split);
  return env;
}

}  // namespace metarl
