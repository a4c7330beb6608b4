#pragma once

#include <cstddef>
#include <vector>

#include "dultra/autodiff/parameters.hpp"

namespace dultra::ad {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  /// Global gradient-norm clip applied before the update; 0 disables it.
  double clip_norm = 0.0;
};

/// Moment accumulators for one ParameterSet, in parameter order.
struct OptimizerState {
  AdamWConfig config;
  std::size_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  OptimizerState() = default;
  OptimizerState(const ParameterSet& params, AdamWConfig cfg);
};

/// One AdamW update from the gradients stored in params[i].grad. Weight decay
/// is decoupled (applied to the weights, not folded into the gradient).
/// Throws DomainError naming the parameter when a gradient is not finite.
void adamw_step(ParameterSet& params, OptimizerState& state);

/// Euclidean norm of all gradients in the set.
double grad_norm(const ParameterSet& params);

}  // namespace dultra::ad
