#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace metarl {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  bool recorded = false;  // produced by an operation on an active tape

  std::span<double> ensure_grad();
};

}  // namespace detail

/// Dense float64 array with an optional gradient buffer.
///
/// Copies are shallow: two Tensor handles may refer to the same storage, the
/// way parameters are shared between the policy heads of an agent. Use
/// clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);
  /// Row vector [1, n].
  static Tensor row(std::vector<double> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  /// Leading dimension for rank-2 tensors, 1 for rank-1.
  std::size_t rows() const;
  /// Trailing dimension.
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  /// Allocates the gradient buffer if needed and fills it with zeros.
  void zero_grad();

  Tensor clone() const;
  /// Same values, cut from any tape; gradients do not flow through the result.
  Tensor detach() const;
  Tensor reshape(Shape shape) const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Define-by-run record of differentiable operations.
///
/// Operations record themselves on the tape installed by a Tape::Scope on the
/// current thread, provided at least one input requires a gradient. With no
/// scope active, operations only compute values.
class Tape {
 public:
  using BackwardFn = std::function<void(const detail::TensorImpl& out)>;

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Accumulates d(loss)/d(leaf) into every reachable leaf with
  /// requires_grad. Consumes the tape.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool consumed() const { return consumed_; }

  static Tape* active();
  void record(std::shared_ptr<detail::TensorImpl> output, BackwardFn backward);

 private:
  struct Entry {
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

/// Suspends recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* previous_;
};

// Primitive operations. Rank-1 tensors of size n behave as a single row [1, n]
// wherever a matrix is expected.

Tensor matmul(const Tensor& a, const Tensor& b);
/// Elementwise a + b. b may also be a row [n] or [1, n] broadcast over the rows
/// of a [m, n].
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product. b may also be a column [m, 1] broadcast over the
/// columns of a [m, n].
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor lgamma(const Tensor& a);
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
Tensor concat(std::initializer_list<Tensor> parts);
Tensor concat(const std::vector<Tensor>& parts);
/// Columns [begin, end) of every row.
Tensor slice(const Tensor& a, std::size_t begin, std::size_t end);
/// out[r, 0] = a[r, index[r]].
Tensor pick(const Tensor& a, std::span<const std::size_t> index);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Row sums, [m, n] -> [m, 1].
Tensor sum_cols(const Tensor& a);
/// Stacks rank-2 tensors with equal column counts along the row axis.
Tensor stack_rows(const std::vector<Tensor>& parts);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace metarl
