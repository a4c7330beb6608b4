#include "dultra/autodiff/parameters.hpp"

namespace dultra::ad {

std::size_t ParameterSet::add(std::string name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  const std::size_t idx = params_.size();
  Tensor grad(value.shape());
  index_.emplace(name, idx);
  params_.push_back(Parameter{std::move(name), std::move(value), std::move(grad)});
  return idx;
}

std::size_t ParameterSet::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

Parameter& ParameterSet::at(const std::string& name) { return params_[index_of(name)]; }
const Parameter& ParameterSet::at(const std::string& name) const {
  return params_[index_of(name)];
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

void ParameterSet::set_frozen(bool frozen) {
  for (auto& p : params_) p.frozen = frozen;
}

bool ParameterSet::same_values(const ParameterSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name) return false;
    if (!(params_[i].value == other.params_[i].value)) return false;
  }
  return true;
}

}  // namespace dultra::ad
