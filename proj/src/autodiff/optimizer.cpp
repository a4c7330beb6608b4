#include "dultra/autodiff/optimizer.hpp"

#include <cmath>
#include <string>

namespace dultra::ad {

OptimizerState::OptimizerState(const ParameterSet& params, AdamWConfig cfg) : config(cfg) {
  for (const auto& p : params) {
    m.emplace_back(p.value.shape());
    v.emplace_back(p.value.shape());
  }
}

double grad_norm(const ParameterSet& params) {
  double total = 0.0;
  for (const auto& p : params)
    for (double g : p.grad.data()) total += g * g;
  return std::sqrt(total);
}

void adamw_step(ParameterSet& params, OptimizerState& state) {
  const AdamWConfig& c = state.config;
  if (!(c.lr > 0.0)) throw std::invalid_argument("adamw: learning rate must be positive");
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adamw: optimizer state does not match parameter set");
  }
  for (const auto& p : params) {
    if (!p.grad.all_finite()) throw DomainError("adamw: non-finite gradient in parameter " + p.name);
  }
  double clip = 1.0;
  if (c.clip_norm > 0.0) {
    const double norm = grad_norm(params);
    if (norm > c.clip_norm) clip = c.clip_norm / norm;
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = params[k];
    if (!(state.m[k].shape() == p.value.shape())) {
      throw ShapeError("adamw: moment shape mismatch for " + p.name);
    }
    double* w = p.value.raw();
    const double* g = p.grad.raw();
    double* m = state.m[k].raw();
    double* v = state.v[k].raw();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= c.lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * w[i]);
    }
  }
}

}  // namespace dultra::ad
