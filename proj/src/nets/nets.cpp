#include "metarl/nets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace metarl {

Linear::Linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, Activation act,
               Rng& rng)
    : act_(act) {
  weight_ = params.create(name + ".weight", {in, out}, in, rng);
  bias_ = params.create(name + ".bias", {out}, in, rng);
}

Tensor Linear::operator()(const Tensor& x) const {
  if (x.cols() != weight_.rows()) {
    throw std::invalid_argument("Linear: input shape " + shape_to_string(x.shape()) + " does not match weight " +
                                shape_to_string(weight_.shape()));
  }
  auto y = add(matmul(x, weight_), bias_);
  return act_ == Activation::Tanh ? tanh(y) : y;
}

GruCell::GruCell(ParameterSet& params, const std::string& name, std::size_t input_size, std::size_t hidden_size,
                 Rng& rng)
    : input_(input_size), hidden_(hidden_size) {
  w_ = params.create(name + ".w", {input_size, 3 * hidden_size}, input_size, rng);
  u_zr_ = params.create(name + ".u_zr", {hidden_size, 2 * hidden_size}, hidden_size, rng);
  u_h_ = params.create(name + ".u_h", {hidden_size, hidden_size}, hidden_size, rng);
  b_ = params.create(name + ".b", {3 * hidden_size}, hidden_size, rng);
}

Tensor GruCell::step(const Tensor& x, const Tensor& h) const {
  if (x.cols() != input_ || h.cols() != hidden_ || x.rows() != h.rows()) {
    throw std::invalid_argument("GruCell: input " + shape_to_string(x.shape()) + " / hidden " +
                                shape_to_string(h.shape()) + " do not match cell (" + std::to_string(input_) + ", " +
                                std::to_string(hidden_) + ")");
  }
  const auto n = hidden_;
  const auto gx = add(matmul(x, w_), b_);
  const auto gh = matmul(h, u_zr_);
  const auto z = sigmoid(add(slice(gx, 0, n), slice(gh, 0, n)));
  const auto r = sigmoid(add(slice(gx, n, 2 * n), slice(gh, n, 2 * n)));
  const auto c = tanh(add(slice(gx, 2 * n, 3 * n), matmul(mul(r, h), u_h_)));
  return add(h, mul(z, sub(c, h)));
}

// ---------------------------------------------------------------------------
// Categorical

namespace {

void check_distribution(std::span<const double> probs) {
  if (probs.empty()) throw std::invalid_argument("categorical: empty distribution");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("categorical: negative or non-finite probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("categorical: probabilities sum to " + std::to_string(total));
  }
}

}  // namespace

std::size_t categorical_sample(std::span<const double> probs, Rng& rng) {
  check_distribution(probs);
  const double u = uniform01(rng);
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last_positive = i;
    if (u < acc) return i;
  }
  return last_positive;
}

double categorical_log_prob(std::span<const double> probs, std::size_t action) {
  check_distribution(probs);
  if (action >= probs.size()) throw std::out_of_range("categorical_log_prob: action out of range");
  return std::log(probs[action]);
}

double categorical_entropy(std::span<const double> probs) {
  check_distribution(probs);
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

Tensor categorical_entropy(const Tensor& logits) {
  const auto logp = log_softmax(logits);
  return neg(sum_cols(mul(exp(logp), logp)));
}

// ---------------------------------------------------------------------------
// Beliefs

std::string_view to_string(BeliefFamily family) {
  switch (family) {
    case BeliefFamily::Gaussian: return "gaussian";
    case BeliefFamily::Beta: return "beta";
    case BeliefFamily::Bernoulli: return "bernoulli";
    case BeliefFamily::Multinomial: return "multinomial";
  }
  return "?";
}

BeliefFamily belief_family_from_string(std::string_view name) {
  if (name == "gaussian") return BeliefFamily::Gaussian;
  if (name == "beta") return BeliefFamily::Beta;
  if (name == "bernoulli") return BeliefFamily::Bernoulli;
  if (name == "multinomial") return BeliefFamily::Multinomial;
  throw std::invalid_argument("unknown belief family: " + std::string(name));
}

std::vector<double> BeliefParams::probabilities(std::size_t row) const {
  const auto n = first.cols();
  std::vector<double> out(n);
  if (family == BeliefFamily::Bernoulli) {
    for (std::size_t j = 0; j < n; ++j) out[j] = 1.0 / (1.0 + std::exp(-first.at(row, j)));
  } else if (family == BeliefFamily::Multinomial) {
    double mx = first.at(row, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, first.at(row, j));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (out[j] = std::exp(first.at(row, j) - mx));
    for (auto& p : out) p /= z;
  } else {
    throw std::logic_error("probabilities() is defined for Bernoulli and Multinomial beliefs only");
  }
  return out;
}

BeliefHead::BeliefHead(ParameterSet& params, const std::string& name, BeliefFamily family, std::size_t in,
                       std::size_t task_size, Rng& rng)
    : family_(family), task_size_(task_size) {
  switch (family) {
    case BeliefFamily::Gaussian:
      first_ = Linear(params, name + ".mean", in, task_size, Activation::Tanh, rng);
      second_ = Linear(params, name + ".variance", in, task_size, Activation::None, rng);
      break;
    case BeliefFamily::Beta:
      first_ = Linear(params, name + ".alpha", in, task_size, Activation::None, rng);
      second_ = Linear(params, name + ".beta", in, task_size, Activation::None, rng);
      break;
    case BeliefFamily::Bernoulli:
    case BeliefFamily::Multinomial:
      first_ = Linear(params, name + ".logits", in, task_size, Activation::None, rng);
      break;
  }
}

BeliefParams BeliefHead::operator()(const Tensor& z) const {
  BeliefParams out;
  out.family = family_;
  switch (family_) {
    case BeliefFamily::Gaussian:
      out.first = first_(z);
      out.second = sigmoid(second_(z));
      break;
    case BeliefFamily::Beta:
      out.first = add_scalar(softplus(first_(z)), kBetaShapeFloor);
      out.second = add_scalar(softplus(second_(z)), kBetaShapeFloor);
      break;
    case BeliefFamily::Bernoulli:
    case BeliefFamily::Multinomial:
      out.first = first_(z);
      break;
  }
  return out;
}

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

void check_support(const BeliefParams& params, const Tensor& mu) {
  if (mu.rows() != params.rows() || mu.cols() != params.first.cols()) {
    throw std::invalid_argument("belief_log_likelihood: task shape " + shape_to_string(mu.shape()) +
                                " does not match belief " + shape_to_string(params.first.shape()));
  }
  const auto d = mu.data();
  switch (params.family) {
    case BeliefFamily::Gaussian:
      for (double v : d) {
        if (!std::isfinite(v)) throw std::invalid_argument("gaussian belief: non-finite task value");
      }
      break;
    case BeliefFamily::Beta:
      for (double v : d) {
        if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument("beta belief: task value outside (0,1)");
      }
      break;
    case BeliefFamily::Bernoulli:
      for (double v : d) {
        if (v != 1.0 && v != -1.0) throw std::invalid_argument("bernoulli belief: task value must be -1 or +1");
      }
      break;
    case BeliefFamily::Multinomial: {
      const auto n = mu.cols();
      for (std::size_t r = 0; r < mu.rows(); ++r) {
        int ones = 0;
        for (std::size_t j = 0; j < n; ++j) {
          const double v = d[r * n + j];
          if (v == 1.0) {
            ++ones;
          } else if (v != 0.0) {
            ones = -1;
            break;
          }
        }
        if (ones != 1) throw std::invalid_argument("multinomial belief: task must be one-hot");
      }
      break;
    }
  }
}

Tensor map_constant(const Tensor& mu, double (*fn)(double)) {
  std::vector<double> out(mu.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(mu.data()[i]);
  return Tensor::from(mu.shape(), std::move(out));
}

}  // namespace

Tensor belief_log_likelihood(const BeliefParams& params, const Tensor& mu) {
  check_support(params, mu);
  switch (params.family) {
    case BeliefFamily::Gaussian: {
      // -1/2 ln(2 pi var) - (mu - m)^2 / (2 var)
      const auto& var = params.second;
      const auto diff = sub(mu, params.first);
      const auto quad = mul(square(diff), scale(exp(neg(log(var))), 0.5));
      const auto norm = scale(add_scalar(log(var), kLogTwoPi), 0.5);
      return neg(sum_cols(add(quad, norm)));
    }
    case BeliefFamily::Beta: {
      const auto& a = params.first;
      const auto& b = params.second;
      const auto log_mu = map_constant(mu, [](double v) { return std::log(v); });
      const auto log_1m = map_constant(mu, [](double v) { return std::log1p(-v); });
      const auto kernel = add(mul(add_scalar(a, -1.0), log_mu), mul(add_scalar(b, -1.0), log_1m));
      const auto log_beta = sub(add(lgamma(a), lgamma(b)), lgamma(add(a, b)));
      return sum_cols(sub(kernel, log_beta));
    }
    case BeliefFamily::Bernoulli: {
      // y ln sigmoid(l) + (1 - y) ln sigmoid(-l), y = (mu + 1) / 2
      const auto& logit = params.first;
      const auto y = map_constant(mu, [](double v) { return 0.5 * (v + 1.0); });
      const auto one_minus_y = map_constant(mu, [](double v) { return 0.5 * (1.0 - v); });
      const auto ll = add(mul(y, neg(softplus(neg(logit)))), mul(one_minus_y, neg(softplus(logit))));
      return sum_cols(ll);
    }
    case BeliefFamily::Multinomial:
      return sum_cols(mul(mu, log_softmax(params.first)));
  }
  throw std::logic_error("unreachable");
}

std::vector<double> belief_sample(const BeliefParams& params, std::size_t row, Rng& rng) {
  const auto n = params.first.cols();
  std::vector<double> out(n, 0.0);
  switch (params.family) {
    case BeliefFamily::Gaussian:
      for (std::size_t j = 0; j < n; ++j) {
        const double m = params.first.at(row, j);
        const double sd = std::sqrt(params.second.at(row, j));
        out[j] = std::clamp(std::normal_distribution<double>(m, sd)(rng), -1.0, 1.0);
      }
      break;
    case BeliefFamily::Beta:
      for (std::size_t j = 0; j < n; ++j) {
        const double x = std::gamma_distribution<double>(params.first.at(row, j), 1.0)(rng);
        const double y = std::gamma_distribution<double>(params.second.at(row, j), 1.0)(rng);
        out[j] = (x + y) > 0.0 ? x / (x + y) : 0.5;
      }
      break;
    case BeliefFamily::Bernoulli: {
      const auto p = params.probabilities(row);
      for (std::size_t j = 0; j < n; ++j) out[j] = uniform01(rng) < p[j] ? 1.0 : -1.0;
      break;
    }
    case BeliefFamily::Multinomial: {
      const auto p = params.probabilities(row);
      out[categorical_sample(p, rng)] = 1.0;
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

HistoryEncoder::HistoryEncoder(ParameterSet& params, const std::string& name, std::size_t state_size,
                               std::size_t action_count, std::size_t hidden_size, Rng& rng)
    : state_embed_(params, name + ".state", state_size, hidden_size, Activation::Tanh, rng),
      action_embed_(params, name + ".action", action_count, hidden_size, Activation::Tanh, rng),
      gru_(params, name + ".gru", 2 * hidden_size, hidden_size, rng) {}

Tensor HistoryEncoder::step(const Tensor& state, const Tensor& prev_action, const Tensor& h) const {
  return gru_.step(concat({state_embed_(state), action_embed_(prev_action)}), h);
}

}  // namespace metarl
