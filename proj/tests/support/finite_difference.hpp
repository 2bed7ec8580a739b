#pragma once

// Test-only central-difference oracle. Independent of the tape: it only ever
// evaluates the loss with recording switched off.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "metarl/tensor.hpp"

namespace metarl::testing {

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

/// Compares tape gradients of `loss_fn` (a scalar-valued closure over
/// `params`) with central finite differences of step h.
inline GradientCheck check_gradients(std::vector<Tensor> params, const std::function<Tensor()>& loss_fn,
                                     double h = 1e-5) {
  for (auto& p : params) p.zero_grad();
  {
    Tape tape;
    Tensor loss;
    {
      Tape::Scope scope(tape);
      loss = loss_fn();
    }
    tape.backward(loss);
  }
  GradientCheck result;
  for (auto& p : params) {
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss_fn().item();
      values[i] = saved - h;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      result.max_relative_error = std::max(result.max_relative_error, relative_error(analytic[i], numeric));
      ++result.checked;
    }
  }
  return result;
}

}  // namespace metarl::testing
