#include "metarl/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace metarl {

Tensor ParameterSet::create(std::string name, Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  auto t = Tensor::from(std::move(shape), std::move(values), true);
  t.zero_grad();
  add(std::move(name), t);
  return t;
}

void ParameterSet::add(std::string name, Tensor tensor) {
  for (const auto& e : entries_) {
    if (e.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
  }
  entries_.push_back({std::move(name), std::move(tensor)});
}

void ParameterSet::extend(std::string_view prefix, const ParameterSet& other) {
  for (const auto& e : other.entries_) add(std::string(prefix) + e.name, e.tensor);
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.tensor);
  return out;
}

std::vector<Tensor> ParameterSet::with_prefix(std::string_view prefix) const {
  std::vector<Tensor> out;
  for (const auto& e : entries_) {
    if (std::string_view(e.name).starts_with(prefix)) out.push_back(e.tensor);
  }
  return out;
}

const Tensor& ParameterSet::get(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw std::out_of_range("no parameter named " + std::string(name));
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  if (other.entries_.size() != entries_.size()) throw std::invalid_argument("parameter sets differ in size");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& dst = entries_[i];
    const auto& src = other.entries_[i];
    if (dst.name != src.name || dst.tensor.shape() != src.tensor.shape()) {
      throw std::invalid_argument("parameter mismatch: " + dst.name + " vs " + src.name);
    }
    auto d = dst.tensor.mutable_data();
    std::copy(src.tensor.data().begin(), src.tensor.data().end(), d.begin());
  }
}

}  // namespace metarl
