#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dultra/core/rng.hpp"
#include "dultra/mdlm/sequence.hpp"
#include "dultra/model/interfaces.hpp"

namespace dultra::decoding {

enum class SelectionMode { kHeuristic, kPlanner };

SelectionMode parse_mode(const std::string& name);
std::string mode_name(SelectionMode mode);

struct DecodeConfig {
  std::size_t block_size = 8;
  double threshold = 0.9;    // confidence threshold of the heuristic
  double temperature = 0.1;  // token sampling temperature; 0 is greedy
  double alpha = 1.0;        // multiplier on planner unmask probabilities
  std::size_t max_steps = 0; // hard step cap; 0 means twice the completion length
  SelectionMode mode = SelectionMode::kHeuristic;

  void validate() const;
  std::size_t step_cap(std::size_t completion_len) const;
};

/// One denoising step. Probabilities are those of the process that produced it.
struct DecodeStepRecord {
  std::vector<std::size_t> candidates;  // absolute positions, ascending
  std::vector<double> planner_probs;    // raw sigmoid outputs per candidate (planner mode)
  std::vector<double> select_probs;     // effective selection probability per candidate
  std::vector<std::size_t> selected;    // ascending subset of candidates
  std::vector<Token> tokens;            // sampled token per selected position
  std::vector<double> token_probs;      // probability of each sampled token
  bool forced = false;
  double time_cond = 0.0;
  double log_select = 0.0;  // generation-time log pi_Select
  double log_token = 0.0;   // generation-time log pi_Token
};

struct RolloutTrace {
  std::vector<Token> prompt;
  std::size_t completion_len = 0;
  std::vector<DecodeStepRecord> steps;
  std::vector<Token> final_tokens;  // prompt followed by the decoded completion

  std::size_t nfe() const { return steps.size(); }
  double log_likelihood() const;
  bool hit_cap() const;
  std::span<const Token> completion() const {
    return std::span<const Token>(final_tokens).subspan(prompt.size());
  }
};

/// Leftmost min(B, #masked) masked completion positions. Throws
/// std::invalid_argument when nothing is masked.
std::vector<std::size_t> candidate_positions(const MaskedSequence& state, Token mask,
                                             std::size_t block_size);

/// Largest softmax probability of each row of `logits` at the given positions.
std::vector<double> confidences(const ad::Tensor& logits, std::span<const std::size_t> positions);

/// Candidates whose confidence exceeds tau; if none does, the single most
/// confident candidate (lowest position on ties).
std::vector<std::size_t> confidence_select(const ad::Tensor& logits,
                                           std::span<const std::size_t> candidates, double tau);

struct PlannerSelection {
  std::vector<std::size_t> selected;
  std::vector<double> effective;  // min(alpha * p, 1) per candidate
};

/// Independent Bernoulli draw per candidate, in candidate order, with
/// probability min(alpha * p_i, 1). An empty selection is a valid outcome.
PlannerSelection planner_select(std::span<const std::size_t> candidates,
                                std::span<const double> probs, double alpha, Rng& rng);

struct StepResult {
  MaskedSequence next;
  DecodeStepRecord record;
};

/// One model evaluation and one unmasking step. At step_index = cap - 1 every
/// remaining masked position is unmasked greedily and the record is flagged
/// as forced. Throws DomainError if the model emits non-finite logits.
StepResult decode_step(model::Denoiser& model, model::UnmaskPlanner* planner,
                       const MaskedSequence& state, const DecodeConfig& config,
                       std::size_t step_index, Rng& rng);

/// Decodes from the all-mask completion until nothing is masked.
RolloutTrace rollout(model::Denoiser& model, model::UnmaskPlanner* planner,
                     std::span<const Token> prompt, std::size_t completion_len,
                     const DecodeConfig& config, Rng& rng);

/// States before each step of the trace, starting from the all-mask
/// completion. Throws std::invalid_argument naming the step when a record does
/// not apply to its state.
std::vector<MaskedSequence> replay_states(const RolloutTrace& trace, Token mask);

/// Applies every record and returns the final sequence.
std::vector<Token> replay(const RolloutTrace& trace, Token mask);

}  // namespace dultra::decoding
