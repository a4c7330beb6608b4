#include "dultra/likelihood/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dultra::likelihood {

namespace {

using ad::Record;
using ad::Tensor;
using ad::Var;

const double kLogFloor = std::log(kProbFloor);

Var zero(Record& r) { return r.constant(Tensor::scalar(0.0)); }

// Sum of the entries of `v` at `offsets`; entries whose value is below the
// floor are replaced by the constant log floor.
Var floored_sum(Record& r, Var v, const std::vector<std::size_t>& offsets, bool& clamped) {
  std::vector<std::size_t> keep;
  std::size_t floored = 0;
  for (std::size_t o : offsets) {
    if (v.value()[o] < kLogFloor) {
      ++floored;
    } else {
      keep.push_back(o);
    }
  }
  if (floored) clamped = true;
  Var total = keep.empty() ? zero(r) : ad::sum(ad::take(v, keep));
  if (floored) total = total + r.constant(Tensor::scalar(kLogFloor * static_cast<double>(floored)));
  return total;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

void check_step(const MaskedSequence& prev, const decoding::DecodeStepRecord& step,
                const decoding::DecodeConfig& config, Token mask) {
  const auto expected = step.forced ? prev.masked_positions(mask)
                                    : decoding::candidate_positions(prev, mask, config.block_size);
  if (step.candidates != expected) throw std::invalid_argument("candidates do not match the state");
  if (step.selected.size() != step.tokens.size()) {
    throw std::invalid_argument("selected/token count mismatch");
  }
  if (!std::is_sorted(step.selected.begin(), step.selected.end())) {
    throw std::invalid_argument("selected positions not ascending");
  }
  for (std::size_t pos : step.selected) {
    if (!std::binary_search(expected.begin(), expected.end(), pos)) {
      throw std::invalid_argument("selected position " + std::to_string(pos) + " is not a candidate");
    }
  }
  if (step.forced && step.selected != expected) {
    throw std::invalid_argument("forced step must unmask every masked position");
  }
}

}  // namespace

StepLikelihood step_log_likelihood(Record& r, model::Denoiser& model, model::UnmaskPlanner* planner,
                                   const MaskedSequence& prev,
                                   const decoding::DecodeStepRecord& step,
                                   const decoding::DecodeConfig& config) {
  const Token mask = model.vocabulary().mask();
  check_step(prev, step, config, mask);
  StepLikelihood out;
  const model::DenoiserOutput den = model.forward(r, prev.tokens);
  const std::size_t m = den.logits.value().last_dim();

  // Token factor: temperature-scaled categorical at each selected position.
  // Greedy decoding (temperature 0, or the forced step) is a point mass.
  if (step.forced || config.temperature == 0.0 || step.selected.empty()) {
    out.log_token = zero(r);
  } else {
    Var lp = ad::log_softmax(den.logits * (1.0 / config.temperature));
    std::vector<std::size_t> offsets;
    for (std::size_t j = 0; j < step.selected.size(); ++j) offsets.push_back(step.selected[j] * m + step.tokens[j]);
    out.log_token = floored_sum(r, lp, offsets, out.clamped);
  }

  // Selection factor: independent Bernoulli(min(alpha * p, 1)) per candidate.
  if (step.forced || config.mode == decoding::SelectionMode::kHeuristic) {
    out.log_select = zero(r);
  } else {
    if (planner == nullptr) throw std::invalid_argument("planner mode without a planner");
    Var z = planner->logits(r, den, prev.tokens, prev.masked_fraction(mask));
    std::vector<std::size_t> on, off;
    for (std::size_t c : step.candidates) {
      (std::binary_search(step.selected.begin(), step.selected.end(), c) ? on : off).push_back(c);
    }
    const double alpha = config.alpha;
    if (alpha == 1.0) {
      Var sel = zero(r);
      if (!on.empty()) sel = floored_sum(r, ad::log_sigmoid(ad::take(z, on)), iota(on.size()), out.clamped);
      if (!off.empty()) {
        sel = sel + floored_sum(r, ad::log_sigmoid(-ad::take(z, off)), iota(off.size()), out.clamped);
      }
      out.log_select = sel;
    } else {
      // p~ = min(alpha * sigmoid(z), 1): saturated candidates are selected
      // with probability 1 and carry no gradient.
      Var p = ad::sigmoid(ad::take(z, step.candidates));
      Var ls = ad::log_sigmoid(ad::take(z, step.candidates));
      Var total = zero(r);
      std::vector<std::size_t> sel_idx, rej_idx;
      for (std::size_t k = 0; k < step.candidates.size(); ++k) {
        const bool selected = std::binary_search(step.selected.begin(), step.selected.end(), step.candidates[k]);
        const bool saturated = alpha * p.value()[k] >= 1.0;
        if (selected && !saturated) sel_idx.push_back(k);
        if (!selected) {
          if (saturated) {
            out.clamped = true;
            total = total + r.constant(Tensor::scalar(kLogFloor));
          } else {
            rej_idx.push_back(k);
          }
        }
      }
      if (!sel_idx.empty()) {
        total = total + ad::sum(ad::take(ls, sel_idx)) +
                r.constant(Tensor::scalar(std::log(alpha) * static_cast<double>(sel_idx.size())));
      }
      if (!rej_idx.empty()) {
        Var q = r.constant(Tensor::scalar(1.0)) - ad::take(p, rej_idx) * alpha;
        Tensor floor_t = Tensor::filled({rej_idx.size()}, kProbFloor);
        for (std::size_t i = 0; i < rej_idx.size(); ++i) {
          if (q.value()[i] < kProbFloor) out.clamped = true;
        }
        total = total + ad::sum(ad::log(ad::maximum(q, r.constant(std::move(floor_t)))));
      }
      out.log_select = total;
    }
  }
  out.total = out.log_select + out.log_token;
  return out;
}

RolloutLikelihood rollout_log_likelihood(Record& r, model::Denoiser& model,
                                         model::UnmaskPlanner* planner,
                                         const decoding::RolloutTrace& trace,
                                         const decoding::DecodeConfig& config) {
  const Token mask = model.vocabulary().mask();
  const auto states = decoding::replay_states(trace, mask);
  const std::size_t cap = config.step_cap(trace.completion_len);
  RolloutLikelihood out;
  out.total = zero(r);
  for (std::size_t k = 0; k < states.size(); ++k) {
    const auto& step = trace.steps[k];
    if (step.forced != (k + 1 == cap)) {
      throw std::invalid_argument("trace step " + std::to_string(k) + ": forced flag inconsistent with step cap " +
                                  std::to_string(cap));
    }
    try {
      StepLikelihood s = step_log_likelihood(r, model, planner, states[k], step, config);
      out.clamped = out.clamped || s.clamped;
      out.total = out.total + s.total;
      out.steps.push_back(std::move(s));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("trace step " + std::to_string(k) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dultra::likelihood
