#pragma once

#include <span>

#include "dultra/autodiff/parameters.hpp"
#include "dultra/autodiff/record.hpp"
#include "dultra/mdlm/sequence.hpp"

namespace dultra::model {

struct DenoiserOutput {
  ad::Var logits;  // [L, m]; the mask column is pinned far below every other logit
  ad::Var hidden;  // [L, d]; invalid for models without a hidden representation
};

/// Clean-token predictor mu_theta of a masked diffusion model.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual DenoiserOutput forward(ad::Record& record, std::span<const Token> tokens) = 0;
  virtual ad::ParameterSet& parameters() = 0;
  virtual const Vocabulary& vocabulary() const = 0;
};

/// Per-position unmask logit given the denoiser output on the same state.
class UnmaskPlanner {
 public:
  virtual ~UnmaskPlanner() = default;
  /// Returns [L] logits; unmask probabilities are their sigmoid. Throws
  /// std::domain_error when time_cond is outside [0, 1].
  virtual ad::Var logits(ad::Record& record, const DenoiserOutput& denoised,
                         std::span<const Token> tokens, double time_cond) = 0;
  virtual ad::ParameterSet& parameters() = 0;
};

/// Causal scorer: log p(c_i | q, c_<i) for each completion token.
class Teacher {
 public:
  virtual ~Teacher() = default;
  virtual ad::Var completion_logprobs(ad::Record& record, std::span<const Token> prompt,
                                      std::span<const Token> completion) = 0;
  virtual ad::ParameterSet& parameters() = 0;
  virtual const Vocabulary& vocabulary() const = 0;
};

}  // namespace dultra::model
