#pragma once

#include <cstddef>
#include <vector>

#include "dultra/autodiff/optimizer.hpp"
#include "dultra/core/rng.hpp"
#include "dultra/mdlm/corpus.hpp"
#include "dultra/mdlm/schedule.hpp"
#include "dultra/model/interfaces.hpp"

namespace dultra::mdlm {

struct PretrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  std::size_t log_every = 100;
  NoiseSchedule schedule{};
  /// Draw the batch's times as (b + u) / batch_size with one shared uniform u
  /// instead of independently; each t stays marginally uniform.
  bool stratified_time = true;
  /// Linear warmup from 0 to the optimizer's lr over this many steps.
  std::size_t warmup_steps = 0;
  /// Cosine decay of the lr to 0 over the steps after warmup.
  bool cosine_decay = false;
};

struct LossPoint {
  std::size_t step = 0;  // last step included in the window
  double loss = 0.0;     // mean per-token loss over the window
};

struct PretrainMetrics {
  std::vector<LossPoint> curve;
};

/// Minimizes the simplified Monte-Carlo objective, normalized per completion
/// token, with one optimizer update per batch of examples drawn uniformly
/// with replacement. Throws DomainError naming the step when the loss is not
/// finite.
PretrainMetrics pretrain_mdlm(model::Denoiser& model, const std::vector<Example>& corpus,
                              const PretrainConfig& config, ad::OptimizerState& optimizer, Rng& rng);

/// Masks each completion token with probability 1 - alpha_t, decodes every
/// masked position greedily from one forward pass and returns the fraction
/// recovered exactly.
double reconstruction_accuracy(model::Denoiser& model, const std::vector<Example>& corpus, double t,
                               const NoiseSchedule& schedule, Rng& rng);

}  // namespace dultra::mdlm
