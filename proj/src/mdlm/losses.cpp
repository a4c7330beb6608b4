#include "dultra/mdlm/losses.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "dultra/mdlm/process.hpp"

namespace dultra::mdlm {

namespace {

constexpr std::size_t kMaxExhaustiveLength = 6;
constexpr std::size_t kMaxExhaustiveVocab = 8;

MaskedSequence apply_mask(const MaskedSequence& x0, std::uint64_t bits, Token mask) {
  MaskedSequence xt = x0;
  for (std::size_t k = 0; k < x0.completion_len(); ++k)
    if (bits >> k & 1) xt.tokens[x0.prompt_len + k] = mask;
  return xt;
}

// Sum of -log mu over masked positions, evaluated without gradients.
double masked_nll_value(model::Denoiser& model, const MaskedSequence& xt,
                        std::span<const Token> x0) {
  const Token mask = model.vocabulary().mask();
  if (xt.masked_count(mask) == 0) return 0.0;
  const auto lp = clean_logprobs(model, xt, x0);
  double total = 0.0;
  for (std::size_t i : xt.masked_positions(mask)) total -= lp[i];
  return total;
}

}  // namespace

std::vector<double> clean_logprobs(model::Denoiser& model, const MaskedSequence& xt,
                                   std::span<const Token> x0) {
  ad::Record rec(ad::GradMode::kInference);
  ad::Var lp = ad::log_softmax(model.forward(rec, xt.tokens).logits);
  const std::size_t m = lp.value().last_dim();
  std::vector<double> out(xt.length());
  for (std::size_t i = 0; i < xt.length(); ++i) out[i] = lp.value()[i * m + x0[i]];
  return out;
}

ad::Var masked_nll(model::Denoiser& model, ad::Record& record, const MaskedSequence& xt,
                   std::span<const Token> x0) {
  const Token mask = model.vocabulary().mask();
  const auto masked = xt.masked_positions(mask);
  if (masked.empty()) return record.constant(ad::Tensor::scalar(0.0));
  ad::Var lp = ad::log_softmax(model.forward(record, xt.tokens).logits);
  const std::size_t m = lp.value().last_dim();
  std::vector<std::size_t> offsets;
  for (std::size_t i : masked) offsets.push_back(i * m + x0[i]);
  return -ad::sum(ad::take(lp, offsets));
}

McLossSample simplified_mc_loss(model::Denoiser& model, ad::Record& record,
                                const MaskedSequence& x0, const NoiseSchedule& schedule,
                                Rng& rng) {
  double t = 0.0;
  while (t == 0.0) t = 1.0 - rng.uniform();  // uniform() is in [0,1), so t is in (0,1]
  return simplified_loss_at(model, record, x0, t, schedule, rng);
}

McLossSample simplified_loss_at(model::Denoiser& model, ad::Record& record,
                                const MaskedSequence& x0, double t,
                                const NoiseSchedule& schedule, Rng& rng) {
  if (!(t > 0.0 && t <= 1.0)) throw std::domain_error("simplified loss: t must be in (0, 1]");
  const Token mask = model.vocabulary().mask();
  MaskedSequence xt = forward_noise(x0, t, schedule, mask, rng);
  McLossSample out;
  out.t = t;
  out.masked = xt.masked_count(mask);
  out.loss = masked_nll(model, record, xt, x0.tokens) * schedule.loss_weight(t);
  return out;
}

NelboTerms nelbo_discrete(model::Denoiser& model, const MaskedSequence& x0, std::size_t steps,
                          EstimateMode mode, const NoiseSchedule& schedule, Rng& rng,
                          std::size_t samples) {
  if (steps < 1) throw std::invalid_argument("nelbo_discrete: need at least one step");
  const Token mask = model.vocabulary().mask();
  const std::size_t n = x0.completion_len();
  if (mode == EstimateMode::kExhaustive &&
      (n > kMaxExhaustiveLength || model.vocabulary().size > kMaxExhaustiveVocab)) {
    throw std::invalid_argument("nelbo_discrete: exhaustive mode limited to 6 positions and 8 tokens, got " +
                                std::to_string(n) + " and " +
                                std::to_string(model.vocabulary().size));
  }
  std::unordered_map<std::uint64_t, double> cache;
  auto nll_of = [&](std::uint64_t bits) {
    auto it = cache.find(bits);
    if (it != cache.end()) return it->second;
    const double v = masked_nll_value(model, apply_mask(x0, bits, mask), x0.tokens);
    cache.emplace(bits, v);
    return v;
  };
  NelboTerms terms;
  const double T = static_cast<double>(steps);
  for (std::size_t i = 1; i <= steps; ++i) {
    const double t = static_cast<double>(i) / T;
    const double s = static_cast<double>(i - 1) / T;
    const double at = schedule.alpha(t);
    // KL between the true and model reverse kernels at a masked position is
    // -((alpha_s - alpha_t)/(1 - alpha_t)) log mu[x0]; at s = 0 the factor is 1
    // and the term is the reconstruction loss.
    const double factor = (schedule.alpha(s) - at) / (1.0 - at);
    double expected = 0.0;
    if (mode == EstimateMode::kExhaustive) {
      for (std::uint64_t bits = 0; bits < (1ULL << n); ++bits) {
        const auto k = static_cast<double>(std::popcount(bits));
        const double prob = std::pow(1.0 - at, k) * std::pow(at, static_cast<double>(n) - k);
        if (prob == 0.0) continue;
        expected += prob * nll_of(bits);
      }
    } else {
      for (std::size_t r = 0; r < samples; ++r) {
        MaskedSequence xt = forward_noise(x0, t, schedule, mask, rng);
        expected += masked_nll_value(model, xt, x0.tokens);
      }
      expected /= static_cast<double>(samples);
    }
    (i == 1 ? terms.recons : terms.diffusion) += factor * expected;
  }
  // At t = 1 the forward process is the all-mask point mass, which is also the
  // model's prior, so the KL vanishes identically.
  terms.prior = 0.0;
  return terms;
}

double aoarm_expected_nll(model::Denoiser& model, const MaskedSequence& x0, EstimateMode mode,
                          Rng& rng, std::size_t samples) {
  const Token mask = model.vocabulary().mask();
  const std::size_t n = x0.completion_len();
  if (mode == EstimateMode::kExhaustive && n > kMaxExhaustiveLength) {
    throw std::invalid_argument("aoarm_expected_nll: exhaustive mode limited to 6 positions");
  }
  if (n == 0) return 0.0;
  // Log-probabilities depend only on which positions are still masked.
  std::unordered_map<std::uint64_t, std::vector<double>> cache;
  auto logprobs = [&](std::uint64_t bits) -> const std::vector<double>& {
    auto it = cache.find(bits);
    if (it == cache.end())
      it = cache.emplace(bits, clean_logprobs(model, apply_mask(x0, bits, mask), x0.tokens)).first;
    return it->second;
  };
  auto order_nll = [&](const std::vector<std::size_t>& order) {
    std::uint64_t bits = (1ULL << n) - 1;
    double total = 0.0;
    for (std::size_t k : order) {
      total -= logprobs(bits)[x0.prompt_len + k];
      bits &= ~(1ULL << k);
    }
    return total;
  };
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  double sum = 0.0;
  std::size_t count = 0;
  if (mode == EstimateMode::kExhaustive) {
    do {
      sum += order_nll(order);
      ++count;
    } while (std::next_permutation(order.begin(), order.end()));
  } else {
    for (std::size_t r = 0; r < samples; ++r) {
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
      sum += order_nll(order);
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

}  // namespace dultra::mdlm
