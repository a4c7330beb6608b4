#pragma once

#include <cstddef>
#include <vector>

#include "dultra/autodiff/record.hpp"
#include "dultra/core/rng.hpp"
#include "dultra/mdlm/schedule.hpp"
#include "dultra/mdlm/sequence.hpp"
#include "dultra/model/interfaces.hpp"

namespace dultra::mdlm {

/// Per-position clean-token log-probabilities log mu(x_t)[x0_i] (as plain
/// doubles) for every position of `xt`.
std::vector<double> clean_logprobs(model::Denoiser& model, const MaskedSequence& xt,
                                   std::span<const Token> x0);

/// Sum over masked completion positions of -log mu(x_t)[x0_i], on `record`.
ad::Var masked_nll(model::Denoiser& model, ad::Record& record, const MaskedSequence& xt,
                   std::span<const Token> x0);

struct McLossSample {
  ad::Var loss;
  double t = 0.0;
  std::size_t masked = 0;
};

/// One-sample estimate of the continuous-time objective:
/// (-alpha'_t / (1 - alpha_t)) * sum over masked positions of -log mu(x_t)[x0_i],
/// t ~ U(0, 1] (a draw of exactly 0 is redrawn).
McLossSample simplified_mc_loss(model::Denoiser& model, ad::Record& record,
                                const MaskedSequence& x0, const NoiseSchedule& schedule, Rng& rng);

/// The same estimate at a given t in (0, 1]; only the mask draw is random.
McLossSample simplified_loss_at(model::Denoiser& model, ad::Record& record,
                                const MaskedSequence& x0, double t,
                                const NoiseSchedule& schedule, Rng& rng);

enum class EstimateMode { kMonteCarlo, kExhaustive };

struct NelboTerms {
  double recons = 0.0;
  double diffusion = 0.0;
  double prior = 0.0;
  double total() const { return recons + diffusion + prior; }
};

/// Discrete-time bound with T steps, s(i) = (i-1)/T, t(i) = i/T. Exhaustive
/// mode sums over every masking pattern at each t(i) and accepts at most 6
/// completion positions and 8 vocabulary entries; Monte-Carlo mode draws
/// `samples` masking patterns per step.
NelboTerms nelbo_discrete(model::Denoiser& model, const MaskedSequence& x0, std::size_t steps,
                          EstimateMode mode, const NoiseSchedule& schedule, Rng& rng,
                          std::size_t samples = 1);

/// Expected negative log-likelihood averaged over generation orders of the
/// completion. Exhaustive mode accepts at most 6 completion positions; sampled
/// mode averages `samples` random orders.
double aoarm_expected_nll(model::Denoiser& model, const MaskedSequence& x0, EstimateMode mode,
                          Rng& rng, std::size_t samples = 1000);

}  // namespace dultra::mdlm
