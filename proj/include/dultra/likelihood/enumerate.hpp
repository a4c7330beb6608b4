#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "dultra/decoding/decode.hpp"
#include "dultra/model/interfaces.hpp"
#include "json.hpp"

namespace dultra::likelihood {

/// One possible outcome of a denoising step from a given state.
struct Transition {
  std::vector<std::size_t> selected;
  std::vector<Token> tokens;
  double probability = 0.0;
};

/// Every next state reachable in one step with nonzero probability, with its
/// probability under the same process that decode_step samples from.
std::vector<Transition> step_transitions(model::Denoiser& model, model::UnmaskPlanner* planner,
                                         const MaskedSequence& state, std::size_t step_index,
                                         const decoding::DecodeConfig& config);

struct StepChoice {
  std::vector<std::size_t> selected;
  std::vector<Token> tokens;
};

struct Trajectory {
  std::vector<StepChoice> steps;
  std::vector<Token> final_tokens;
  double probability = 0.0;
};

struct Enumeration {
  std::vector<Trajectory> trajectories;
  std::unordered_map<std::string, std::size_t> index;
  double total_probability = 0.0;

  /// Probability of the trajectory followed by `trace`; 0 when unreachable.
  double probability_of(const decoding::RolloutTrace& trace) const;
};

/// Canonical text key of a sequence of step choices.
std::string trajectory_key(const std::vector<StepChoice>& steps);
std::string trajectory_key(const decoding::RolloutTrace& trace);

/// Upper bound on the number of trajectories (every selection subset and token
/// assignment counted as reachable), computed without touching the model.
double trajectory_count_bound(std::size_t completion_len, std::size_t vocab,
                              const decoding::DecodeConfig& config);

/// Depth-first enumeration of all trajectories from the all-mask completion.
/// Accepts completion length <= 4 and vocabulary <= 6, and rejects instances
/// whose trajectory bound exceeds `max_trajectories` before enumerating.
Enumeration enumerate_all_rollouts(model::Denoiser& model, model::UnmaskPlanner* planner,
                                   std::span<const Token> prompt, std::size_t completion_len,
                                   const decoding::DecodeConfig& config,
                                   double max_trajectories = 4e6);

/// Probability of each final sequence, summed over trajectories.
std::map<std::vector<Token>, double> marginal_outcome_distribution(const Enumeration& enumeration);

nlohmann::json enumeration_to_json(const Enumeration& enumeration);

}  // namespace dultra::likelihood
