#pragma once

#include <vector>

#include "dultra/autodiff/record.hpp"
#include "dultra/decoding/decode.hpp"
#include "dultra/model/interfaces.hpp"

namespace dultra::likelihood {

/// Probabilities below this are clamped before the log and the result flagged.
inline constexpr double kProbFloor = 1e-12;

struct StepLikelihood {
  ad::Var log_select;
  ad::Var log_token;
  ad::Var total;
  bool clamped = false;
};

/// Teacher-forced log p(o^k | q, o^{k-1}) of one recorded step, recomputed on
/// `record` so it is differentiable in the model and planner parameters.
/// Forced steps and heuristic selections contribute 0 to the selection term.
/// Throws std::invalid_argument when the record does not fit `prev`.
StepLikelihood step_log_likelihood(ad::Record& record, model::Denoiser& model,
                                   model::UnmaskPlanner* planner, const MaskedSequence& prev,
                                   const decoding::DecodeStepRecord& step,
                                   const decoding::DecodeConfig& config);

struct RolloutLikelihood {
  ad::Var total;
  std::vector<StepLikelihood> steps;
  bool clamped = false;
};

/// Sum of step log-likelihoods over the whole trace. Throws
/// std::invalid_argument naming the step when the trace is inconsistent.
RolloutLikelihood rollout_log_likelihood(ad::Record& record, model::Denoiser& model,
                                         model::UnmaskPlanner* planner,
                                         const decoding::RolloutTrace& trace,
                                         const decoding::DecodeConfig& config);

}  // namespace dultra::likelihood
