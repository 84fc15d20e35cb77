#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "descrl/tensor/tensor.hpp"

namespace descrl::tensor {

using ParamId = std::size_t;

/// Ordered, named collection of learnable tensors. Insertion order is the
/// canonical order for checkpoints, gradient vectors and optimizer state.
template <typename Real>
class ParameterSet {
 public:
  ParamId add(std::string name, Tensor<Real> value) {
    if (index_.contains(name)) {
      throw std::invalid_argument("parameter '" + name + "' already exists");
    }
    const ParamId id = entries_.size();
    index_.emplace(name, id);
    entries_.push_back({std::move(name), std::move(value)});
    return id;
  }

  bool contains(std::string_view name) const {
    return index_.contains(std::string(name));
  }

  ParamId id(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) {
      throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
    }
    return it->second;
  }

  std::size_t size() const { return entries_.size(); }
  const std::string& name(ParamId id) const { return entries_.at(id).name; }
  Tensor<Real>& value(ParamId id) { return entries_.at(id).value; }
  const Tensor<Real>& value(ParamId id) const { return entries_.at(id).value; }
  Tensor<Real>& value(std::string_view name) { return value(id(name)); }
  const Tensor<Real>& value(std::string_view name) const {
    return value(id(name));
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  /// Ids of all parameters whose name satisfies `pred`.
  std::vector<ParamId> select(
      const std::function<bool(std::string_view)>& pred) const {
    std::vector<ParamId> out;
    for (ParamId i = 0; i < entries_.size(); ++i) {
      if (pred(entries_[i].name)) out.push_back(i);
    }
    return out;
  }

  std::vector<ParamId> all_ids() const {
    std::vector<ParamId> out(entries_.size());
    for (ParamId i = 0; i < out.size(); ++i) out[i] = i;
    return out;
  }

  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<Other>());
    return out;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      if (a.entries_[i].name != b.entries_[i].name ||
          !(a.entries_[i].value == b.entries_[i].value)) {
        return false;
      }
    }
    return true;
  }

 private:
  struct Entry {
    std::string name;
    Tensor<Real> value;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, ParamId> index_;
};

/// Gradients aligned with a ParameterSet (same ids, same shapes).
template <typename Real>
using Gradients = std::vector<Tensor<Real>>;

}  // namespace descrl::tensor
