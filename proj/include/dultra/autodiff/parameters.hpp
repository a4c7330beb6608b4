#pragma once

#include <cstddef>
#include <deque>
#include <string>
#include <unordered_map>

#include "dultra/autodiff/tensor.hpp"

namespace dultra::ad {

/// A trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  /// Frozen parameters are bound as constants on every record.
  bool frozen = false;
};

/// Ordered, name-addressable collection of parameters. Element addresses are
/// stable for the lifetime of the set, so records may point at them.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = default;
  ParameterSet& operator=(const ParameterSet&) = default;
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  /// Registers a parameter and returns its index. Names must be unique.
  std::size_t add(std::string name, Tensor value);

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;

  std::size_t size() const noexcept { return params_.size(); }
  /// Total number of scalar entries across all parameters.
  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  void set_frozen(bool frozen);
  /// True when every parameter value is bitwise identical to `other`'s.
  bool same_values(const ParameterSet& other) const;

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace dultra::ad
