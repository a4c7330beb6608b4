#include "dultra/mdlm/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dultra/mdlm/losses.hpp"
#include "dultra/mdlm/process.hpp"

namespace dultra::mdlm {

namespace {

double lr_factor(const PretrainConfig& config, std::size_t step) {
  if (step <= config.warmup_steps) {
    return static_cast<double>(step) / static_cast<double>(config.warmup_steps);
  }
  if (!config.cosine_decay || config.steps <= config.warmup_steps) return 1.0;
  const double progress = static_cast<double>(step - config.warmup_steps - 1) /
                          static_cast<double>(config.steps - config.warmup_steps);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace

PretrainMetrics pretrain_mdlm(model::Denoiser& model, const std::vector<Example>& corpus,
                              const PretrainConfig& config, ad::OptimizerState& optimizer,
                              Rng& rng) {
  PretrainMetrics metrics;
  if (config.steps == 0) return metrics;
  if (corpus.empty()) throw std::invalid_argument("pretrain_mdlm: empty corpus");
  ad::ParameterSet& params = model.parameters();
  const std::size_t log_every = std::max<std::size_t>(config.log_every, 1);
  double window = 0.0;
  std::size_t window_steps = 0;
  const double base_lr = optimizer.config.lr;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    optimizer.config.lr = base_lr * lr_factor(config, step);
    params.zero_grad();
    double step_loss = 0.0;
    const double shift = config.stratified_time ? 1.0 - rng.uniform() : 0.0;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const Example& ex = corpus[rng.index(corpus.size())];
      const MaskedSequence x0 = ex.sequence();
      const double norm = static_cast<double>(config.batch_size * std::max<std::size_t>(x0.completion_len(), 1));
      ad::Record rec;
      McLossSample sample =
          config.stratified_time
              ? simplified_loss_at(model, rec, x0, (static_cast<double>(b) + shift) / static_cast<double>(config.batch_size),
                                   config.schedule, rng)
              : simplified_mc_loss(model, rec, x0, config.schedule, rng);
      if (sample.masked == 0) continue;
      ad::Var loss = sample.loss * (1.0 / norm);
      step_loss += loss.item();
      ad::accumulate_parameter_grads(rec, ad::backward(rec, loss));
    }
    if (!std::isfinite(step_loss)) {
      throw ad::DomainError("pretrain_mdlm: non-finite loss at step " + std::to_string(step));
    }
    ad::adamw_step(params, optimizer);
    window += step_loss;
    ++window_steps;
    if (step % log_every == 0 || step == config.steps) {
      metrics.curve.push_back({step, window / static_cast<double>(window_steps)});
      window = 0.0;
      window_steps = 0;
    }
  }
  optimizer.config.lr = base_lr;
  params.zero_grad();
  return metrics;
}

double reconstruction_accuracy(model::Denoiser& model, const std::vector<Example>& corpus, double t,
                               const NoiseSchedule& schedule, Rng& rng) {
  const Token mask = model.vocabulary().mask();
  std::size_t correct = 0, total = 0;
  for (const Example& ex : corpus) {
    const MaskedSequence x0 = ex.sequence();
    const MaskedSequence xt = forward_noise(x0, t, schedule, mask, rng);
    const auto masked = xt.masked_positions(mask);
    if (masked.empty()) continue;
    ad::Record rec(ad::GradMode::kInference);
    const ad::Tensor& logits = model.forward(rec, xt.tokens).logits.value();
    const std::size_t m = logits.last_dim();
    for (std::size_t i : masked) {
      const double* row = logits.raw() + i * m;
      const auto best = static_cast<Token>(std::max_element(row, row + m) - row);
      correct += best == x0.tokens[i];
      ++total;
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace dultra::mdlm
