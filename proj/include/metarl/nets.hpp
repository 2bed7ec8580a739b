#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metarl/parameters.hpp"
#include "metarl/rng.hpp"
#include "metarl/tensor.hpp"

namespace metarl {

enum class Activation { Tanh, None };

/// Single affine layer y = act(x W + b), W: [in, out].
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, Activation act, Rng& rng);

  Tensor operator()(const Tensor& x) const;

  std::size_t in_features() const { return weight_.rows(); }
  std::size_t out_features() const { return weight_.cols(); }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
  Activation act_ = Activation::Tanh;
};

/// Gated recurrent unit:
///   z = sigmoid(x W_z + h U_z + b_z)
///   r = sigmoid(x W_r + h U_r + b_r)
///   c = tanh(x W_h + (r * h) U_h + b_h)
///   h' = (1 - z) * h + z * c
/// W packs [W_z | W_r | W_h] column-wise; U_zr packs [U_z | U_r].
class GruCell {
 public:
  GruCell() = default;
  GruCell(ParameterSet& params, const std::string& name, std::size_t input_size, std::size_t hidden_size, Rng& rng);

  /// x: [B, input_size], h: [B, hidden_size] -> [B, hidden_size].
  Tensor step(const Tensor& x, const Tensor& h) const;
  Tensor initial_state(std::size_t batch) const { return Tensor::zeros({batch, hidden_}); }

  std::size_t input_size() const { return input_; }
  std::size_t hidden_size() const { return hidden_; }
  const Tensor& input_weight() const { return w_; }
  const Tensor& recurrent_gate_weight() const { return u_zr_; }
  const Tensor& recurrent_candidate_weight() const { return u_h_; }
  const Tensor& bias() const { return b_; }

 private:
  std::size_t input_ = 0;
  std::size_t hidden_ = 0;
  Tensor w_;
  Tensor u_zr_;
  Tensor u_h_;
  Tensor b_;
};

// Categorical distributions over actions, on plain probability vectors.
std::size_t categorical_sample(std::span<const double> probs, Rng& rng);
double categorical_log_prob(std::span<const double> probs, std::size_t action);
/// -sum p ln p with 0 ln 0 = 0.
double categorical_entropy(std::span<const double> probs);

/// Per-row entropy of softmax(logits) as a differentiable [B, 1] tensor.
Tensor categorical_entropy(const Tensor& logits);

enum class BeliefFamily { Gaussian, Beta, Bernoulli, Multinomial };

std::string_view to_string(BeliefFamily family);
BeliefFamily belief_family_from_string(std::string_view name);

/// Distribution parameters emitted by a BeliefHead, one row per sample.
///   Gaussian:    first = mean, second = variance in (0, 1)
///   Beta:        first = alpha, second = beta
///   Bernoulli:   first = logit of P(mu = +1)
///   Multinomial: first = logits over task ids
struct BeliefParams {
  BeliefFamily family = BeliefFamily::Gaussian;
  Tensor first;
  Tensor second;

  std::size_t rows() const { return first.rows(); }
  /// P(mu = +1) for Bernoulli, softmax probabilities for Multinomial.
  std::vector<double> probabilities(std::size_t row) const;
};

/// Maps an embedding z to a distribution over task descriptors.
class BeliefHead {
 public:
  BeliefHead() = default;
  BeliefHead(ParameterSet& params, const std::string& name, BeliefFamily family, std::size_t in, std::size_t task_size,
             Rng& rng);

  BeliefParams operator()(const Tensor& z) const;
  BeliefFamily family() const { return family_; }
  std::size_t task_size() const { return task_size_; }

 private:
  BeliefFamily family_ = BeliefFamily::Gaussian;
  std::size_t task_size_ = 0;
  Linear first_;
  Linear second_;
};

/// Beta shape parameters are softplus(raw) + this floor.
inline constexpr double kBetaShapeFloor = 1e-3;

/// Exact log-likelihood of `mu` ([B, D], one task per row), dimensions treated
/// independently and summed: returns [B, 1]. Throws when mu leaves the
/// family's support (Beta: (0,1); Bernoulli: {-1,+1}; Multinomial: one-hot).
Tensor belief_log_likelihood(const BeliefParams& params, const Tensor& mu);

/// Draws one task descriptor from row `row`. Gaussian draws are clamped to
/// [-1, 1]; Bernoulli returns +1/-1; Multinomial returns a one-hot vector.
std::vector<double> belief_sample(const BeliefParams& params, std::size_t row, Rng& rng);

/// Embeds (state, previous action) separately with tanh layers of width hs and
/// aggregates them with a GRU of hidden size hs.
class HistoryEncoder {
 public:
  HistoryEncoder() = default;
  HistoryEncoder(ParameterSet& params, const std::string& name, std::size_t state_size, std::size_t action_count,
                 std::size_t hidden_size, Rng& rng);

  /// state: [B, state_size], prev_action: [B, action_count] one-hot.
  Tensor step(const Tensor& state, const Tensor& prev_action, const Tensor& h) const;
  Tensor initial_state(std::size_t batch) const { return gru_.initial_state(batch); }
  std::size_t hidden_size() const { return gru_.hidden_size(); }
  std::size_t state_size() const { return state_embed_.in_features(); }
  std::size_t action_count() const { return action_embed_.in_features(); }

 private:
  Linear state_embed_;
  Linear action_embed_;
  GruCell gru_;
};

}  // namespace metarl
