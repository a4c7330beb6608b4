#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dultra/model/interfaces.hpp"

namespace dultra::model {

/// Logit used to represent probability zero in tables.
inline constexpr double kImpossibleLogit = -1e9;

/// Number of full states of `length` positions over `vocab` ids, and the
/// base-`vocab` index of a state. Throws when the table would exceed 2^22 rows.
std::size_t state_count(std::size_t vocab, std::size_t length);
std::size_t state_index(std::span<const Token> tokens, std::size_t vocab);

/// Lookup-table denoiser for small instances. With kNone every position has a
/// fixed distribution; with kFullState the distribution at each position is
/// indexed by the entire current state.
class TabularDenoiser final : public Denoiser {
 public:
  enum class Context { kNone, kFullState };

  TabularDenoiser(const Vocabulary& vocab, std::size_t length, Context context);

  DenoiserOutput forward(ad::Record& record, std::span<const Token> tokens) override;
  ad::ParameterSet& parameters() override { return params_; }
  const Vocabulary& vocabulary() const override { return vocab_; }

  Context context() const { return context_; }
  std::size_t length() const { return length_; }
  /// Sets the predicted distribution at `position` for `state` (ignored with
  /// kNone). Probabilities are over the full vocabulary; zeros become
  /// kImpossibleLogit.
  void set_distribution(std::span<const Token> state, std::size_t position,
                        std::span<const double> probs);
  /// Raw logits row for (state, position).
  std::span<double> row(std::span<const Token> state, std::size_t position);

 private:
  std::size_t row_index(std::span<const Token> state, std::size_t position) const;

  Vocabulary vocab_;
  std::size_t length_;
  Context context_;
  ad::ParameterSet params_;
};

/// Lookup-table planner: one logit per position, optionally per full state.
class TabularPlanner final : public UnmaskPlanner {
 public:
  TabularPlanner(const Vocabulary& vocab, std::size_t length, bool state_dependent);

  ad::Var logits(ad::Record& record, const DenoiserOutput& denoised, std::span<const Token> tokens,
                 double time_cond) override;
  ad::ParameterSet& parameters() override { return params_; }

  /// Sets sigmoid(logit) = p for (state, position), or for every entry with
  /// fill_probability; p = 1 maps to a logit of 40.
  void set_probability(std::span<const Token> state, std::size_t position, double p);
  void fill_probability(double p);

 private:
  std::size_t row_of(std::span<const Token> tokens) const;

  Vocabulary vocab_;
  std::size_t length_;
  bool state_dependent_;
  ad::ParameterSet params_;
};

/// Lookup-table causal model: next-token logits indexed by the entire prefix.
class TabularTeacher final : public Teacher {
 public:
  TabularTeacher(const Vocabulary& vocab, std::size_t max_prefix);

  ad::Var completion_logprobs(ad::Record& record, std::span<const Token> prompt,
                              std::span<const Token> completion) override;
  ad::ParameterSet& parameters() override { return params_; }
  const Vocabulary& vocabulary() const override { return vocab_; }

  void set_distribution(std::span<const Token> prefix, std::span<const double> probs);

 private:
  std::size_t prefix_index(std::span<const Token> prefix) const;

  Vocabulary vocab_;
  std::size_t max_prefix_;
  ad::ParameterSet params_;
};

}  // namespace dultra::model
