#pragma once

#include "dultra/core/rng.hpp"
#include "dultra/mdlm/schedule.hpp"
#include "dultra/mdlm/sequence.hpp"

namespace dultra::mdlm {

/// Masks each completion token independently with probability 1 - alpha_t.
/// Throws std::domain_error for t outside [0, 1] and std::invalid_argument if
/// the completion of x0 already contains a mask.
MaskedSequence forward_noise(const MaskedSequence& x0, double t, const NoiseSchedule& schedule,
                             Token mask, Rng& rng);

/// Distribution of x_s given x_t and x_0 for one token; the support is
/// {x0_token, mask}.
struct PosteriorMass {
  double clean = 0.0;
  double mask = 0.0;
};

/// Throws std::domain_error unless s < t, std::invalid_argument unless
/// xt_token is x0_token or mask.
PosteriorMass reverse_posterior(Token xt_token, Token x0_token, double s, double t,
                                const NoiseSchedule& schedule, Token mask);

}  // namespace dultra::mdlm
