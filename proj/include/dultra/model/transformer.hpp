#pragma once

#include <cstddef>
#include <string>

#include "dultra/core/rng.hpp"
#include "dultra/model/interfaces.hpp"

namespace dultra::model {

enum class Attention { kBidirectional, kCausal };

struct BackboneConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 4;
  std::size_t max_len = 64;
  std::size_t vocab = 29;
  std::size_t mlp_mult = 4;
  Attention attention = Attention::kBidirectional;

  /// Throws std::invalid_argument when the configuration is inconsistent.
  void validate() const;
};

struct PlannerConfig {
  std::size_t input_dim = 64;  // backbone hidden width
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t mlp_mult = 4;
  std::size_t time_features = 16;
  std::size_t vocab = 29;

  void validate() const;
};

struct InitScheme {
  /// Gaussian weights use std = gain / sqrt(fan_in).
  double gain = 1.0;
  /// Zero the planner's output projection so every unmask probability starts at 0.5.
  bool zero_planner_output = true;
  /// Zero the planner's time-conditioned modulation generator.
  bool zero_modulation = true;
};

/// Bidirectional pre-norm transformer with a clean-token head. The mask
/// token's logit is pinned at -1e9 so it is never predicted.
class MaskedDenoiser final : public Denoiser {
 public:
  MaskedDenoiser(const BackboneConfig& config, Rng& rng, const InitScheme& scheme = {});

  DenoiserOutput forward(ad::Record& record, std::span<const Token> tokens) override;
  ad::ParameterSet& parameters() override { return params_; }
  const Vocabulary& vocabulary() const override { return vocab_; }
  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  Vocabulary vocab_;
  ad::ParameterSet params_;
};

/// Causal transformer scoring completions token by token.
class CausalTeacher final : public Teacher {
 public:
  CausalTeacher(const BackboneConfig& config, Rng& rng, const InitScheme& scheme = {});

  /// Next-token logits [L, m]: row j predicts token j + 1.
  ad::Var logits(ad::Record& record, std::span<const Token> tokens);
  ad::Var completion_logprobs(ad::Record& record, std::span<const Token> prompt,
                              std::span<const Token> completion) override;
  ad::ParameterSet& parameters() override { return params_; }
  const Vocabulary& vocabulary() const override { return vocab_; }
  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  Vocabulary vocab_;
  ad::ParameterSet params_;
};

/// Unmask planner: projects backbone hidden states to its own width, adds
/// token embeddings and a mask embedding at masked positions, runs one
/// transformer block modulated by the time condition (adaptive layer norm),
/// and maps each position to a scalar logit.
class PlannerHead final : public UnmaskPlanner {
 public:
  PlannerHead(const PlannerConfig& config, Rng& rng, const InitScheme& scheme = {});

  ad::Var logits(ad::Record& record, const DenoiserOutput& denoised, std::span<const Token> tokens,
                 double time_cond) override;
  ad::ParameterSet& parameters() override { return params_; }
  const PlannerConfig& config() const { return config_; }

 private:
  PlannerConfig config_;
  ad::ParameterSet params_;
};

}  // namespace dultra::model
