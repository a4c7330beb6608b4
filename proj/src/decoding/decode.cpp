#include "dultra/decoding/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dultra::decoding {

namespace {

std::vector<double> log_softmax_row(const double* row, std::size_t m, double temperature) {
  std::vector<double> z(row, row + m);
  for (double& v : z) v /= temperature;
  const double mx = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double v : z) total += std::exp(v - mx);
  const double lse = mx + std::log(total);
  for (double& v : z) v -= lse;
  return z;
}

std::size_t argmax(const double* row, std::size_t m) {
  return static_cast<std::size_t>(std::max_element(row, row + m) - row);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

SelectionMode parse_mode(const std::string& name) {
  if (name == "heuristic") return SelectionMode::kHeuristic;
  if (name == "planner") return SelectionMode::kPlanner;
  throw std::invalid_argument("unknown selection mode '" + name + "' (expected heuristic or planner)");
}

std::string mode_name(SelectionMode mode) {
  return mode == SelectionMode::kHeuristic ? "heuristic" : "planner";
}

void DecodeConfig::validate() const {
  if (block_size < 1) throw std::invalid_argument("decode: block size must be at least 1");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw std::invalid_argument("decode: threshold must be in (0, 1]");
  if (!(temperature >= 0.0)) throw std::invalid_argument("decode: temperature must be nonnegative");
  if (!(alpha > 0.0)) throw std::invalid_argument("decode: alpha must be positive");
}

std::size_t DecodeConfig::step_cap(std::size_t completion_len) const {
  return max_steps > 0 ? max_steps : std::max<std::size_t>(2 * completion_len, 1);
}

double RolloutTrace::log_likelihood() const {
  double total = 0.0;
  for (const auto& s : steps) total += s.log_select + s.log_token;
  return total;
}

bool RolloutTrace::hit_cap() const {
  return std::any_of(steps.begin(), steps.end(), [](const DecodeStepRecord& s) { return s.forced; });
}

std::vector<std::size_t> candidate_positions(const MaskedSequence& state, Token mask,
                                             std::size_t block_size) {
  std::vector<std::size_t> out;
  for (std::size_t i = state.prompt_len; i < state.tokens.size() && out.size() < block_size; ++i)
    if (state.tokens[i] == mask) out.push_back(i);
  if (out.empty()) throw std::invalid_argument("candidate_positions: no masked positions");
  return out;
}

std::vector<double> confidences(const ad::Tensor& logits, std::span<const std::size_t> positions) {
  const std::size_t m = logits.last_dim();
  std::vector<double> out;
  out.reserve(positions.size());
  for (std::size_t pos : positions) {
    const auto lp = log_softmax_row(logits.raw() + pos * m, m, 1.0);
    out.push_back(std::exp(*std::max_element(lp.begin(), lp.end())));
  }
  return out;
}

std::vector<std::size_t> confidence_select(const ad::Tensor& logits,
                                           std::span<const std::size_t> candidates, double tau) {
  const auto conf = confidences(logits, candidates);
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < candidates.size(); ++k)
    if (conf[k] > tau) out.push_back(candidates[k]);
  if (out.empty() && !candidates.empty()) {
    const auto best = std::max_element(conf.begin(), conf.end()) - conf.begin();
    out.push_back(candidates[static_cast<std::size_t>(best)]);
  }
  return out;
}

PlannerSelection planner_select(std::span<const std::size_t> candidates,
                                std::span<const double> probs, double alpha, Rng& rng) {
  if (candidates.size() != probs.size()) throw std::invalid_argument("planner_select: size mismatch");
  PlannerSelection out;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const double p = std::min(alpha * probs[k], 1.0);
    out.effective.push_back(p);
    if (rng.uniform() < p) out.selected.push_back(candidates[k]);
  }
  return out;
}

StepResult decode_step(model::Denoiser& model, model::UnmaskPlanner* planner,
                       const MaskedSequence& state, const DecodeConfig& config,
                       std::size_t step_index, Rng& rng) {
  const Token mask = model.vocabulary().mask();
  const std::size_t cap = config.step_cap(state.completion_len());
  if (step_index >= cap) throw std::invalid_argument("decode_step: step index beyond the step cap");
  if (config.mode == SelectionMode::kPlanner && planner == nullptr) {
    throw std::invalid_argument("decode_step: planner mode without a planner");
  }

  StepResult res;
  DecodeStepRecord& rec = res.record;
  rec.time_cond = state.masked_fraction(mask);
  rec.forced = step_index + 1 == cap;

  ad::Record graph(ad::GradMode::kInference);
  const model::DenoiserOutput out = model.forward(graph, state.tokens);
  const ad::Tensor& logits = out.logits.value();
  if (!logits.all_finite()) {
    throw ad::DomainError("decode_step: non-finite logits at step " + std::to_string(step_index) +
                          " for state [" + format_tokens(state.tokens) + "]");
  }
  const std::size_t m = logits.last_dim();

  if (rec.forced) {
    rec.candidates = state.masked_positions(mask);
    rec.select_probs.assign(rec.candidates.size(), 1.0);
    rec.selected = rec.candidates;
  } else {
    rec.candidates = candidate_positions(state, mask, config.block_size);
    if (config.mode == SelectionMode::kHeuristic) {
      rec.selected = confidence_select(logits, rec.candidates, config.threshold);
      for (std::size_t c : rec.candidates) {
        const bool on = std::binary_search(rec.selected.begin(), rec.selected.end(), c);
        rec.select_probs.push_back(on ? 1.0 : 0.0);
      }
    } else {
      const ad::Tensor& z = planner->logits(graph, out, state.tokens, rec.time_cond).value();
      if (!z.all_finite()) {
        throw ad::DomainError("decode_step: non-finite planner output at step " +
                              std::to_string(step_index));
      }
      for (std::size_t c : rec.candidates) rec.planner_probs.push_back(sigmoid(z[c]));
      PlannerSelection sel = planner_select(rec.candidates, rec.planner_probs, config.alpha, rng);
      rec.selected = std::move(sel.selected);
      rec.select_probs = std::move(sel.effective);
      for (std::size_t k = 0; k < rec.candidates.size(); ++k) {
        const double p = rec.select_probs[k];
        const bool on = std::binary_search(rec.selected.begin(), rec.selected.end(), rec.candidates[k]);
        rec.log_select += on ? std::log(p) : std::log1p(-p);
      }
    }
  }

  res.next = state;
  const bool greedy = rec.forced || config.temperature == 0.0;
  for (std::size_t pos : rec.selected) {
    const double* row = logits.raw() + pos * m;
    Token tok;
    double prob = 1.0;
    if (greedy) {
      tok = argmax(row, m);
    } else {
      const auto lp = log_softmax_row(row, m, config.temperature);
      const double u = rng.uniform();
      double cdf = 0.0;
      tok = m;
      std::size_t last_possible = 0;
      for (std::size_t v = 0; v < m; ++v) {
        const double p = std::exp(lp[v]);
        if (p > 0.0) last_possible = v;
        cdf += p;
        if (u < cdf) {
          tok = v;
          break;
        }
      }
      if (tok == m) tok = last_possible;  // u beyond the rounded total mass
      prob = std::exp(lp[tok]);
      rec.log_token += lp[tok];
    }
    rec.tokens.push_back(tok);
    rec.token_probs.push_back(prob);
    res.next.tokens[pos] = tok;
  }
  return res;
}

RolloutTrace rollout(model::Denoiser& model, model::UnmaskPlanner* planner,
                     std::span<const Token> prompt, std::size_t completion_len,
                     const DecodeConfig& config, Rng& rng) {
  config.validate();
  const Token mask = model.vocabulary().mask();
  RolloutTrace trace;
  trace.prompt.assign(prompt.begin(), prompt.end());
  trace.completion_len = completion_len;
  MaskedSequence state = MaskedSequence::all_masked(prompt, completion_len, mask);
  for (std::size_t k = 0; state.masked_count(mask) > 0; ++k) {
    StepResult step = decode_step(model, planner, state, config, k, rng);
    state = std::move(step.next);
    trace.steps.push_back(std::move(step.record));
  }
  trace.final_tokens = std::move(state.tokens);
  return trace;
}

std::vector<MaskedSequence> replay_states(const RolloutTrace& trace, Token mask) {
  std::vector<MaskedSequence> states;
  MaskedSequence state = MaskedSequence::all_masked(trace.prompt, trace.completion_len, mask);
  for (std::size_t k = 0; k < trace.steps.size(); ++k) {
    const DecodeStepRecord& rec = trace.steps[k];
    auto fail = [k](const std::string& why) {
      throw std::invalid_argument("trace step " + std::to_string(k) + ": " + why);
    };
    if (state.masked_count(mask) == 0) fail("no masked positions remain");
    if (rec.selected.size() != rec.tokens.size()) fail("selected/token count mismatch");
    states.push_back(state);
    for (std::size_t j = 0; j < rec.selected.size(); ++j) {
      const std::size_t pos = rec.selected[j];
      if (pos >= state.tokens.size() || state.tokens[pos] != mask) fail("selected position is not masked");
      if (rec.tokens[j] == mask) fail("mask token decoded");
      state.tokens[pos] = rec.tokens[j];
    }
  }
  if (state.masked_count(mask) != 0) {
    throw std::invalid_argument("trace leaves " + std::to_string(state.masked_count(mask)) +
                                " positions masked");
  }
  if (!trace.final_tokens.empty() && state.tokens != trace.final_tokens) {
    throw std::invalid_argument("trace replay does not reproduce the final sequence");
  }
  return states;
}

std::vector<Token> replay(const RolloutTrace& trace, Token mask) {
  MaskedSequence state = MaskedSequence::all_masked(trace.prompt, trace.completion_len, mask);
  auto states = replay_states(trace, mask);
  if (states.empty()) return state.tokens;
  state = states.back();
  const auto& last = trace.steps.back();
  for (std::size_t j = 0; j < last.selected.size(); ++j) state.tokens[last.selected[j]] = last.tokens[j];
  return state.tokens;
}

}  // namespace dultra::decoding
