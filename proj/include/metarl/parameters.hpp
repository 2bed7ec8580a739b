#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "metarl/rng.hpp"
#include "metarl/tensor.hpp"

namespace metarl {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered, named collection of trainable tensors.
class ParameterSet {
 public:
  /// New parameter drawn uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Tensor create(std::string name, Shape shape, std::size_t fan_in, Rng& rng);
  void add(std::string name, Tensor tensor);
  /// Appends every tensor of `other` with `prefix` prepended to its name.
  void extend(std::string_view prefix, const ParameterSet& other);

  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  /// Tensors whose name starts with `prefix`.
  std::vector<Tensor> with_prefix(std::string_view prefix) const;
  const Tensor& get(std::string_view name) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  /// Copies values (not storage) from a set with identical names and shapes.
  void copy_values_from(const ParameterSet& other);

 private:
  std::vector<NamedTensor> entries_;
};

}  // namespace metarl
