#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "../support/finite_difference.hpp"
#include "metarl/nets.hpp"

using namespace metarl;
using metarl::testing::check_gradients;

namespace {

void zero_all(ParameterSet& params) {
  for (const auto& e : params.entries()) {
    auto t = e.tensor;
    for (auto& v : t.mutable_data()) v = 0.0;
  }
}

Tensor random_input(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = dist(rng);
  return Tensor::from({rows, cols}, std::move(v));
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar-loop GRU with the gate conventions spelled out index by index.
std::vector<double> reference_gru_step(const GruCell& cell, const std::vector<double>& x, const std::vector<double>& h) {
  const std::size_t n = cell.hidden_size(), in = cell.input_size();
  const auto& w = cell.input_weight();
  const auto& u = cell.recurrent_gate_weight();
  const auto& uh = cell.recurrent_candidate_weight();
  const auto& b = cell.bias();
  std::vector<double> z(n), r(n), out(n);
  for (std::size_t j = 0; j < n; ++j) {
    double az = b.at(j), ar = b.at(n + j);
    for (std::size_t i = 0; i < in; ++i) {
      az += x[i] * w.at(i, j);
      ar += x[i] * w.at(i, n + j);
    }
    for (std::size_t i = 0; i < n; ++i) {
      az += h[i] * u.at(i, j);
      ar += h[i] * u.at(i, n + j);
    }
    z[j] = sig(az);
    r[j] = sig(ar);
  }
  for (std::size_t j = 0; j < n; ++j) {
    double ac = b.at(2 * n + j);
    for (std::size_t i = 0; i < in; ++i) ac += x[i] * w.at(i, 2 * n + j);
    for (std::size_t i = 0; i < n; ++i) ac += r[i] * h[i] * uh.at(i, j);
    out[j] = (1.0 - z[j]) * h[j] + z[j] * std::tanh(ac);
  }
  return out;
}

}  // namespace

TEST(GruCell, ZeroParametersFromZeroStateStayAtZero) {
  Rng rng(1);
  ParameterSet params;
  GruCell cell(params, "gru", 3, 4, rng);
  zero_all(params);
  auto h = cell.step(random_input(1, 3, rng), cell.initial_state(1));
  for (double v : h.data()) EXPECT_EQ(v, 0.0);
}

TEST(GruCell, ZeroParametersHalveTheState) {
  Rng rng(2);
  ParameterSet params;
  GruCell cell(params, "gru", 3, 4, rng);
  zero_all(params);
  auto v = Tensor::from({1, 4}, {0.8, -0.4, 0.2, 1.0});
  auto h = cell.step(random_input(1, 3, rng), v);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(h.at(j), 0.5 * v.at(j));
}

TEST(GruCell, UnrollMatchesScalarLoopReference) {
  Rng rng(3);
  ParameterSet params;
  GruCell cell(params, "gru", 3, 5, rng);
  auto h = cell.initial_state(1);
  std::vector<double> ref(5, 0.0);
  for (int t = 0; t < 5; ++t) {
    auto x = random_input(1, 3, rng, 2.0);
    h = cell.step(x, h);
    ref = reference_gru_step(cell, {x.data().begin(), x.data().end()}, ref);
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(h.at(j), ref[j], 1e-14);
  }
}

TEST(GruCell, DimensionMismatchIsAnError) {
  Rng rng(4);
  ParameterSet params;
  GruCell cell(params, "gru", 3, 5, rng);
  EXPECT_THROW(cell.step(Tensor::zeros({1, 4}), cell.initial_state(1)), std::invalid_argument);
  EXPECT_THROW(cell.step(Tensor::zeros({1, 3}), Tensor::zeros({1, 4})), std::invalid_argument);
}

TEST(GruCell, TwentyStepUnrollMatchesFiniteDifferences) {
  Rng rng(5);
  ParameterSet params;
  GruCell cell(params, "gru", 3, 4, rng);
  std::vector<Tensor> xs;
  for (int t = 0; t < 20; ++t) xs.push_back(random_input(2, 3, rng));
  auto check = check_gradients(params.tensors(), [&] {
    auto h = cell.initial_state(2);
    Tensor loss = Tensor::scalar(0.0);
    for (const auto& x : xs) {
      h = cell.step(x, h);
      loss = add(loss, sum(mul(h, h)));
    }
    return loss;
  });
  EXPECT_LT(check.max_relative_error, 1e-3);
  EXPECT_EQ(check.checked, params.scalar_count());
}

// Property: after one step from h = 0 the state stays inside [-1, 1].
TEST(GruCell, HiddenStateStaysBounded) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    ParameterSet params;
    GruCell cell(params, "gru", 2, 6, rng);
    for (const auto& e : params.entries()) {
      auto t = e.tensor;
      for (auto& v : t.mutable_data()) v *= 5.0;
    }
    auto h = cell.initial_state(3);
    for (int t = 0; t < 50; ++t) {
      h = cell.step(random_input(3, 2, rng, 10.0), h);
      for (double v : h.data()) ASSERT_LE(std::abs(v), 1.0);
    }
  }
}

TEST(Categorical, EntropyOfUniformAndDegenerate) {
  const double uniform[] = {0.5, 0.5};
  EXPECT_NEAR(categorical_entropy(uniform), std::log(2.0), 1e-15);
  const double degenerate[] = {1.0, 0.0};
  EXPECT_EQ(categorical_entropy(degenerate), 0.0);
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(categorical_sample(degenerate, rng), 0u);
}

TEST(Categorical, LogProbAndInvalidDistribution) {
  const double p[] = {0.2, 0.3, 0.5};
  EXPECT_DOUBLE_EQ(categorical_log_prob(p, 1), std::log(0.3));
  const double bad[] = {0.2, 0.3};
  Rng rng(8);
  EXPECT_THROW(categorical_sample(bad, rng), std::invalid_argument);
  const double negative[] = {1.2, -0.2};
  EXPECT_THROW(categorical_entropy(negative), std::invalid_argument);
  EXPECT_THROW(categorical_log_prob(p, 3), std::out_of_range);
}

TEST(Categorical, SampleFrequenciesWithinThreeSigma) {
  const double p[] = {0.2, 0.3, 0.5};
  Rng rng(9);
  const int n = 100000;
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i) ++counts[categorical_sample(p, rng)];
  for (int k = 0; k < 3; ++k) {
    const double sigma = std::sqrt(n * p[k] * (1 - p[k]));
    EXPECT_LT(std::abs(counts[k] - n * p[k]), 3 * sigma) << k;
  }
}

// Property: entropy lies in [0, ln |A|].
TEST(Categorical, EntropyBounds) {
  Rng rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    auto logits = random_input(1, 4, rng, 6.0);
    auto p = softmax(logits);
    const double h = categorical_entropy(p.data());
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(4.0) + 1e-12);
    EXPECT_NEAR(categorical_entropy(logits).item(), h, 1e-12);
    double total = 0.0;
    for (double v : p.data()) {
      EXPECT_GT(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Belief, GaussianStandardNormalAtZero) {
  BeliefParams b{BeliefFamily::Gaussian, Tensor::from({1, 3}, {0, 0, 0}), Tensor::from({1, 3}, {1, 1, 1})};
  const double ll = belief_log_likelihood(b, Tensor::from({1, 3}, {0, 0, 0})).item();
  EXPECT_NEAR(ll, -1.5 * std::log(2 * std::numbers::pi), 1e-14);
}

TEST(Belief, BernoulliHalf) {
  BeliefParams b{BeliefFamily::Bernoulli, Tensor::from({1, 1}, {0.0}), {}};
  EXPECT_NEAR(belief_log_likelihood(b, Tensor::from({1, 1}, {1.0})).item(), std::log(0.5), 1e-15);
  EXPECT_NEAR(belief_log_likelihood(b, Tensor::from({1, 1}, {-1.0})).item(), std::log(0.5), 1e-15);
}

TEST(Belief, BetaTwoTwoAtHalf) {
  // Beta(2,2) density 6 x (1 - x) = 1.5 at x = 0.5.
  BeliefParams b{BeliefFamily::Beta, Tensor::from({1, 1}, {2.0}), Tensor::from({1, 1}, {2.0})};
  EXPECT_NEAR(belief_log_likelihood(b, Tensor::from({1, 1}, {0.5})).item(), std::log(1.5), 1e-13);
}

TEST(Belief, MultinomialPicksLogProbability) {
  BeliefParams b{BeliefFamily::Multinomial, Tensor::from({1, 3}, {0.0, std::log(2.0), std::log(5.0)}), {}};
  EXPECT_NEAR(belief_log_likelihood(b, Tensor::from({1, 3}, {0, 0, 1})).item(), std::log(5.0 / 8.0), 1e-14);
}

TEST(Belief, OutOfSupportIsAnError) {
  BeliefParams beta{BeliefFamily::Beta, Tensor::from({1, 1}, {2.0}), Tensor::from({1, 1}, {2.0})};
  EXPECT_THROW(belief_log_likelihood(beta, Tensor::from({1, 1}, {1.0})), std::invalid_argument);
  BeliefParams bern{BeliefFamily::Bernoulli, Tensor::from({1, 1}, {0.0}), {}};
  EXPECT_THROW(belief_log_likelihood(bern, Tensor::from({1, 1}, {0.0})), std::invalid_argument);
  BeliefParams multi{BeliefFamily::Multinomial, Tensor::from({1, 2}, {0.0, 0.0}), {}};
  EXPECT_THROW(belief_log_likelihood(multi, Tensor::from({1, 2}, {1.0, 1.0})), std::invalid_argument);
  EXPECT_THROW(belief_log_likelihood(multi, Tensor::from({1, 3}, {1.0, 0.0, 0.0})), std::invalid_argument);
}

TEST(Belief, HeadOutputsRespectFamilyConstraints) {
  Rng rng(11);
  for (auto family : {BeliefFamily::Gaussian, BeliefFamily::Beta, BeliefFamily::Bernoulli, BeliefFamily::Multinomial}) {
    ParameterSet params;
    BeliefHead head(params, "belief", family, 5, 3, rng);
    auto out = head(random_input(4, 5, rng, 3.0));
    for (std::size_t r = 0; r < 4; ++r) {
      switch (family) {
        case BeliefFamily::Gaussian:
          for (std::size_t j = 0; j < 3; ++j) {
            EXPECT_GT(out.second.at(r, j), 0.0);
            EXPECT_LT(out.second.at(r, j), 1.0);
          }
          break;
        case BeliefFamily::Beta:
          for (std::size_t j = 0; j < 3; ++j) {
            EXPECT_GT(out.first.at(r, j), 0.0);
            EXPECT_GT(out.second.at(r, j), 0.0);
          }
          break;
        case BeliefFamily::Bernoulli:
          for (double p : out.probabilities(r)) {
            EXPECT_GT(p, 0.0);
            EXPECT_LT(p, 1.0);
          }
          break;
        case BeliefFamily::Multinomial: {
          double total = 0.0;
          for (double p : out.probabilities(r)) total += p;
          EXPECT_NEAR(total, 1.0, 1e-12);
          break;
        }
      }
    }
  }
}

TEST(Belief, LogLikelihoodGradientsMatchFiniteDifferences) {
  Rng rng(12);
  const std::vector<std::pair<BeliefFamily, std::vector<double>>> cases = {
      {BeliefFamily::Gaussian, {0.3, -0.7, 0.1, 0.9, -0.2, 0.4}},
      {BeliefFamily::Beta, {0.3, 0.7, 0.1, 0.9, 0.2, 0.4}},
      {BeliefFamily::Bernoulli, {1, -1, -1, 1, 1, 1}},
      {BeliefFamily::Multinomial, {0, 1, 0, 1, 0, 0}},
  };
  for (const auto& [family, values] : cases) {
    ParameterSet params;
    BeliefHead head(params, "belief", family, 4, 3, rng);
    auto z = random_input(2, 4, rng);
    auto mu = Tensor::from({2, 3}, values);
    auto check = check_gradients(params.tensors(), [&] { return sum(belief_log_likelihood(head(z), mu)); });
    EXPECT_LT(check.max_relative_error, 1e-4) << to_string(family);
  }
}

TEST(Belief, SamplingEdgeCases) {
  Rng rng(13);
  BeliefParams bern{BeliefFamily::Bernoulli, Tensor::from({1, 1}, {800.0}), {}};
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(belief_sample(bern, 0, rng)[0], 1.0);
  BeliefParams multi{BeliefFamily::Multinomial, Tensor::from({1, 4}, {-800.0, -800.0, 0.0, -800.0}), {}};
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(belief_sample(multi, 0, rng), (std::vector<double>{0, 0, 1, 0}));
}

TEST(Belief, GaussianSampleMean) {
  Rng rng(14);
  BeliefParams g{BeliefFamily::Gaussian, Tensor::from({1, 1}, {0.0}), Tensor::from({1, 1}, {0.04})};
  double total = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double v = belief_sample(g, 0, rng)[0];
    ASSERT_LE(std::abs(v), 1.0);
    total += v;
  }
  EXPECT_LT(std::abs(total / n), 0.01);
}
