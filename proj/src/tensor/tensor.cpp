#include "metarl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <boost/math/special_functions/digamma.hpp>

namespace metarl {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

std::span<double> TensorImpl::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

thread_local Tape* g_active_tape = nullptr;

void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 2) {
    throw std::invalid_argument("tensor rank must be 1 or 2, got shape " + shape_to_string(shape));
  }
  for (auto d : shape) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive, got " + shape_to_string(shape));
  }
}

std::shared_ptr<detail::TensorImpl> new_impl(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  check_shape(shape);
  const auto n = shape_numel(shape);
  Tensor t(new_impl(std::move(shape), std::vector<double>(n, 0.0)));
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::filled(Shape shape, double value) {
  check_shape(shape);
  const auto n = shape_numel(shape);
  return Tensor(new_impl(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) +
                                " values do not fill shape " + shape_to_string(shape));
  }
  Tensor t(new_impl(std::move(shape), std::move(values)));
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::row(std::vector<double> values) {
  const auto n = values.size();
  return from({1, n}, std::move(values));
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::numel() const { return impl_->data.size(); }
std::size_t Tensor::rows() const { return impl_->shape.size() == 2 ? impl_->shape[0] : 1; }
std::size_t Tensor::cols() const { return impl_->shape.back(); }
std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_to_string(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }
bool Tensor::has_grad() const { return impl_->grad.size() == impl_->data.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient buffer");
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() { return impl_->ensure_grad(); }

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

Tensor Tensor::clone() const {
  Tensor t(new_impl(impl_->shape, impl_->data));
  t.impl_->requires_grad = impl_->requires_grad && !impl_->recorded;
  return t;
}

Tensor Tensor::detach() const { return Tensor(new_impl(impl_->shape, impl_->data)); }

// ---------------------------------------------------------------------------
// Tape

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) {
  if (tape.consumed_) throw std::logic_error("cannot record on a consumed tape");
  g_active_tape = &tape;
}

Tape::Scope::~Scope() { g_active_tape = previous_; }

NoGradGuard::NoGradGuard() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::shared_ptr<detail::TensorImpl> output, BackwardFn backward) {
  output->requires_grad = true;
  output->recorded = true;
  entries_.push_back({std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("backward: tape already consumed");
  if (entries_.empty()) throw std::logic_error("backward: tape is empty");
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                (loss.defined() ? shape_to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.impl()->recorded) throw std::invalid_argument("backward: loss was not recorded on a tape");

  consumed_ = true;
  loss.impl()->ensure_grad()[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    auto& out = *it->output;
    if (out.grad.size() == out.data.size()) it->backward(out);
    std::vector<double>().swap(out.grad);
  }
  entries_.clear();
}

// ---------------------------------------------------------------------------
// Operations

namespace {

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

std::invalid_argument shape_error(const char* op, const Tensor& a, const Tensor& b) {
  return std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_to_string(a.shape()) + " and " +
                               shape_to_string(b.shape()));
}

void require_defined(const char* op, const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

template <class Forward, class Derivative>
Tensor unary(const Tensor& a, Forward forward, Derivative derivative) {
  require_defined("unary op", a);
  const auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = forward(in[i]);
  auto impl = new_impl(a.shape(), std::move(out));
  if (tracking({&a})) {
    g_active_tape->record(impl, [ai = a.impl(), derivative](const detail::TensorImpl& o) {
      if (!ai->requires_grad) return;
      auto g = ai->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * derivative(ai->data[i], o.data[i]);
    });
  }
  return Tensor(impl);
}

double stable_softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  const std::size_t m = a.rows(), k = a.cols();
  if (b.rank() != 2 || b.rows() != k) throw shape_error("matmul", a, b);
  const std::size_t n = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  auto impl = new_impl({m, n}, std::move(out));
  if (tracking({&a, &b})) {
    g_active_tape->record(impl, [ai = a.impl(), bi = b.impl(), m, k, n](const detail::TensorImpl& o) {
      const double* g = o.grad.data();
      if (ai->requires_grad) {
        auto ga = ai->ensure_grad();
        const double* pb = bi->data.data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * pb[p * n + j];
            ga[i * k + p] += acc;
          }
        }
      }
      if (bi->requires_grad) {
        auto gb = bi->ensure_grad();
        const double* pa = ai->data.data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double s = pa[i * k + p];
            double* grow = gb.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) grow[j] += s * g[i * n + j];
          }
        }
      }
    });
  }
  return Tensor(impl);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined("add", a);
  require_defined("add", b);
  const auto da = a.data();
  const auto db = b.data();
  const bool same = a.shape() == b.shape();
  const bool row_broadcast = !same && b.rows() == 1 && b.cols() == a.cols() && a.rank() == 2;
  if (!same && !row_broadcast) throw shape_error("add", a, b);
  const std::size_t n = a.cols();
  std::vector<double> out(da.size());
  for (std::size_t i = 0; i < da.size(); ++i) out[i] = da[i] + db[same ? i : i % n];
  auto impl = new_impl(a.shape(), std::move(out));
  if (tracking({&a, &b})) {
    g_active_tape->record(impl, [ai = a.impl(), bi = b.impl(), same, n](const detail::TensorImpl& o) {
      if (ai->requires_grad) {
        auto g = ai->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      }
      if (bi->requires_grad) {
        auto g = bi->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[same ? i : i % n] += o.grad[i];
      }
    });
  }
  return Tensor(impl);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined("sub", a);
  require_defined("sub", b);
  if (a.shape() != b.shape()) throw shape_error("sub", a, b);
  const auto da = a.data();
  const auto db = b.data();
  std::vector<double> out(da.size());
  for (std::size_t i = 0; i < da.size(); ++i) out[i] = da[i] - db[i];
  auto impl = new_impl(a.shape(), std::move(out));
  if (tracking({&a, &b})) {
    g_active_tape->record(impl, [ai = a.impl(), bi = b.impl()](const detail::TensorImpl& o) {
      if (ai->requires_grad) {
        auto g = ai->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      }
      if (bi->requires_grad) {
        auto g = bi->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
      }
    });
  }
  return Tensor(impl);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined("mul", a);
  require_defined("mul", b);
  const bool same = a.shape() == b.shape();
  const bool col_broadcast = !same && a.rank() == 2 && b.rank() == 2 && b.cols() == 1 && b.rows() == a.rows();
  if (!same && !col_broadcast) throw shape_error("mul", a, b);
  const std::size_t n = a.cols();
  const auto da = a.data();
  const auto db = b.data();
  std::vector<double> out(da.size());
  for (std::size_t i = 0; i < da.size(); ++i) out[i] = da[i] * db[same ? i : i / n];
  auto impl = new_impl(a.shape(), std::move(out));
  if (tracking({&a, &b})) {
    g_active_tape->record(impl, [ai = a.impl(), bi = b.impl(), same, n](const detail::TensorImpl& o) {
      if (ai->requires_grad) {
        auto g = ai->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bi->data[same ? i : i / n];
      }
      if (bi->requires_grad) {
        auto g = bi->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[same ? i : i / n] += o.grad[i] * ai->data[i];
      }
    });
  }
  return Tensor(impl);
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
  return unary(a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor lgamma(const Tensor& a) {
  return unary(a, [](double x) { return std::lgamma(x); },
               [](double x, double) { return boost::math::digamma(x); });
}

Tensor softmax(const Tensor& a) {
  require_defined("softmax", a);
  const std::size_t m = a.rows(), n = a.cols();
  const auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < m; ++r) {
    const double* x = in.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  auto impl = new_impl(a.shape(), std::move(out));
  if (tracking({&a})) {
    g_active_tape->record(impl, [ai = a.impl(), m, n](const detail::TensorImpl& o) {
      if (!ai->requires_grad) return;
      auto g = ai->ensure_grad();
      for (std::size_t r = 0; r < m; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += o.grad[r * n + j] * o.data[r * n + j];
        for (std::size_t j = 0; j < n; ++j) g[r * n + j] += o.data[r * n + j] * (o.grad[r * n + j] - dot);
      }
    });
  }
  return Tensor(impl);
}

Tensor log_softmax(const Tensor& a) {
  require_defined("log_softmax", a);
  const std::size_t m = a.rows(), n = a.cols();
  const auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < m; ++r) {
    const double* x = in.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) y[j] = x[j] - lse;
  }
  auto impl = new_impl(a.shape(), std::move(out));
  if (tracking({&a})) {
    g_active_tape->record(impl, [ai = a.impl(), m, n](const detail::TensorImpl& o) {
      if (!ai->requires_grad) return;
      auto g = ai->ensure_grad();
      for (std::size_t r = 0; r < m; ++r) {
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) total += o.grad[r * n + j];
        for (std::size_t j = 0; j < n; ++j) g[r * n + j] += o.grad[r * n + j] - std::exp(o.data[r * n + j]) * total;
      }
    });
  }
  return Tensor(impl);
}

Tensor concat(std::initializer_list<Tensor> parts) { return concat(std::vector<Tensor>(parts)); }

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const std::size_t m = parts.front().rows();
  bool any_rank2 = false;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_defined("concat", p);
    if (p.rows() != m) throw shape_error("concat", parts.front(), p);
    any_rank2 = any_rank2 || p.rank() == 2;
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t n = p.cols();
    const auto d = p.data();
    for (std::size_t r = 0; r < m; ++r) std::copy_n(d.data() + r * n, n, out.data() + r * total + offset);
    offset += n;
  }
  auto impl = new_impl(any_rank2 ? Shape{m, total} : Shape{total}, std::move(out));
  bool track = false;
  if (g_active_tape) {
    for (const auto& p : parts) track = track || p.requires_grad();
  }
  if (track) {
    std::vector<ImplPtr> inputs;
    inputs.reserve(parts.size());
    for (const auto& p : parts) inputs.push_back(p.impl());
    g_active_tape->record(impl, [inputs = std::move(inputs), m, total](const detail::TensorImpl& o) {
      std::size_t offset = 0;
      for (const auto& in : inputs) {
        const std::size_t n = in->shape.back();
        if (in->requires_grad) {
          auto g = in->ensure_grad();
          for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t j = 0; j < n; ++j) g[r * n + j] += o.grad[r * total + offset + j];
          }
        }
        offset += n;
      }
    });
  }
  return Tensor(impl);
}

Tensor slice(const Tensor& a, std::size_t begin, std::size_t end) {
  require_defined("slice", a);
  const std::size_t m = a.rows(), n = a.cols();
  if (begin >= end || end > n) {
    throw std::invalid_argument("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                                ") invalid for shape " + shape_to_string(a.shape()));
  }
  const std::size_t w = end - begin;
  const auto d = a.data();
  std::vector<double> out(m * w);
  for (std::size_t r = 0; r < m; ++r) std::copy_n(d.data() + r * n + begin, w, out.data() + r * w);
  auto impl = new_impl(a.rank() == 2 ? Shape{m, w} : Shape{w}, std::move(out));
  if (tracking({&a})) {
    g_active_tape->record(impl, [ai = a.impl(), m, n, w, begin](const detail::TensorImpl& o) {
      if (!ai->requires_grad) return;
      auto g = ai->ensure_grad();
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < w; ++j) g[r * n + begin + j] += o.grad[r * w + j];
      }
    });
  }
  return Tensor(impl);
}

Tensor pick(const Tensor& a, std::span<const std::size_t> index) {
  require_defined("pick", a);
  const std::size_t m = a.rows(), n = a.cols();
  if (index.size() != m) {
    throw std::invalid_argument("pick: " + std::to_string(index.size()) + " indices for shape " +
                                shape_to_string(a.shape()));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(m);
  for (std::size_t r = 0; r < m; ++r) {
    if (idx[r] >= n) throw std::out_of_range("pick: index " + std::to_string(idx[r]) + " out of range");
    out[r] = a.data()[r * n + idx[r]];
  }
  auto impl = new_impl({m, 1}, std::move(out));
  if (tracking({&a})) {
    g_active_tape->record(impl, [ai = a.impl(), idx = std::move(idx), n](const detail::TensorImpl& o) {
      if (!ai->requires_grad) return;
      auto g = ai->ensure_grad();
      for (std::size_t r = 0; r < idx.size(); ++r) g[r * n + idx[r]] += o.grad[r];
    });
  }
  return Tensor(impl);
}

Tensor sum(const Tensor& a) {
  require_defined("sum", a);
  double total = 0.0;
  for (double x : a.data()) total += x;
  auto impl = new_impl({1}, {total});
  if (tracking({&a})) {
    g_active_tape->record(impl, [ai = a.impl()](const detail::TensorImpl& o) {
      if (!ai->requires_grad) return;
      auto g = ai->ensure_grad();
      for (auto& x : g) x += o.grad[0];
    });
  }
  return Tensor(impl);
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum_cols(const Tensor& a) {
  require_defined("sum_cols", a);
  const std::size_t m = a.rows(), n = a.cols();
  const auto d = a.data();
  std::vector<double> out(m, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r] += d[r * n + j];
  }
  auto impl = new_impl({m, 1}, std::move(out));
  if (tracking({&a})) {
    g_active_tape->record(impl, [ai = a.impl(), m, n](const detail::TensorImpl& o) {
      if (!ai->requires_grad) return;
      auto g = ai->ensure_grad();
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < n; ++j) g[r * n + j] += o.grad[r];
      }
    });
  }
  return Tensor(impl);
}

Tensor stack_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  bool track = false;
  for (const auto& p : parts) {
    require_defined("stack_rows", p);
    if (p.cols() != n) throw shape_error("stack_rows", parts.front(), p);
    m += p.rows();
    track = track || p.requires_grad();
  }
  std::vector<double> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  auto impl = new_impl({m, n}, std::move(out));
  if (track && g_active_tape) {
    std::vector<ImplPtr> inputs;
    for (const auto& p : parts) inputs.push_back(p.impl());
    g_active_tape->record(impl, [inputs = std::move(inputs)](const detail::TensorImpl& o) {
      std::size_t offset = 0;
      for (const auto& in : inputs) {
        if (in->requires_grad) {
          auto g = in->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[offset + i];
        }
        offset += in->data.size();
      }
    });
  }
  return Tensor(impl);
}

Tensor Tensor::reshape(Shape shape) const {
  check_shape(shape);
  if (shape_numel(shape) != numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_to_string(this->shape()) + " as " +
                                shape_to_string(shape));
  }
  auto impl = new_impl(std::move(shape), impl_->data);
  if (tracking({this})) {
    g_active_tape->record(impl, [ai = impl_](const detail::TensorImpl& o) {
      if (!ai->requires_grad) return;
      auto g = ai->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
  }
  return Tensor(impl);
}

}  // namespace metarl
