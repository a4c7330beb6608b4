#include "dultra/mdlm/process.hpp"

#include <stdexcept>
#include <string>

namespace dultra::mdlm {

MaskedSequence forward_noise(const MaskedSequence& x0, double t, const NoiseSchedule& schedule,
                             Token mask, Rng& rng) {
  const double keep = schedule.alpha(t);
  if (x0.masked_count(mask) != 0) {
    throw std::invalid_argument("forward_noise: clean sequence already contains mask tokens");
  }
  MaskedSequence xt = x0;
  for (std::size_t i = x0.prompt_len; i < xt.tokens.size(); ++i) {
    if (rng.uniform() >= keep) xt.tokens[i] = mask;
  }
  return xt;
}

PosteriorMass reverse_posterior(Token xt_token, Token x0_token, double s, double t,
                                const NoiseSchedule& schedule, Token mask) {
  if (!(s < t)) {
    throw std::domain_error("reverse_posterior: need s < t, got s=" + std::to_string(s) +
                            " t=" + std::to_string(t));
  }
  if (xt_token == x0_token && x0_token != mask) return {1.0, 0.0};
  if (xt_token != mask) {
    throw std::invalid_argument("reverse_posterior: x_t token must equal x_0 token or the mask");
  }
  const double at = schedule.alpha(t);
  const double as = schedule.alpha(s);
  return {(as - at) / (1.0 - at), (1.0 - as) / (1.0 - at)};
}

}  // namespace dultra::mdlm
