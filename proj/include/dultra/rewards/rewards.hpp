#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dultra/autodiff/optimizer.hpp"
#include "dultra/core/rng.hpp"
#include "dultra/mdlm/corpus.hpp"
#include "dultra/model/interfaces.hpp"
#include "dultra/rewards/toy.hpp"

namespace dultra::rewards {

inline constexpr double kCorrectReward = 2.0;
inline constexpr double kFormatReward = 0.5;
inline constexpr double kStepScale = 50.0;

/// 2.0 when the marked answer matches exactly, otherwise 0.0.
double task_reward(const TaskSpec& task, std::span<const Token> prompt,
                   std::span<const Token> completion);

/// 0.5 when the completion carries a nonempty marked answer, otherwise 0.0.
double format_reward(std::span<const Token> completion, const TaskSpec& task);

/// -nfe / 50. Throws std::invalid_argument for nfe = 0.
double efficiency_reward(std::size_t nfe);

/// (1/|c|) (sum_i log p_teacher(c_i | q, c_<i) - beta * student_logprob).
/// When `pad` is given, pad positions are excluded from the teacher sum and
/// from |c| (an all-pad completion falls back to its full length). Throws
/// std::invalid_argument for an empty completion.
double distill_reward(model::Teacher& teacher, std::span<const Token> prompt,
                      std::span<const Token> completion, double student_logprob, double beta,
                      std::optional<Token> pad = toy::kPad);

struct RewardWeights {
  double task = 1.0;
  double format = 1.0;
  double step = 1.0;
  double distill = 1.0;
  double beta = 0.0;

  /// Weights of the code track: task 3.0, step 0.1, others 1.0.
  static RewardWeights coding_weights();
  static RewardWeights preset(const std::string& name);
  void validate() const;
};

struct RewardParts {
  double task = 0.0;
  double format = 0.0;
  double step = 0.0;
  double distill = 0.0;
};

struct RewardBreakdown {
  double r_task = 0.0;
  double r_format = 0.0;
  double r_step = 0.0;
  double r_distill = 0.0;
  double r_total = 0.0;
  std::size_t nfe = 0;
};

RewardBreakdown total_reward(const RewardParts& parts, const RewardWeights& weights,
                             std::size_t nfe = 0);

// ---- teacher ----------------------------------------------------------------

struct TeacherTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  std::size_t log_every = 100;
};

struct PerplexityPoint {
  std::size_t step = 0;
  double perplexity = 0.0;  // exp of the mean per-token NLL over the window
};

struct TeacherMetrics {
  std::vector<PerplexityPoint> curve;
};

/// Causal next-token training on gold completions given their prompts.
/// Throws DomainError naming the step when the loss is not finite.
TeacherMetrics pretrain_teacher(model::Teacher& teacher, const std::vector<Example>& corpus,
                                const TeacherTrainConfig& config, ad::OptimizerState& optimizer,
                                Rng& rng);

/// Mean per-token teacher log-probability of the examples' completions.
double mean_completion_logprob(model::Teacher& teacher, const std::vector<Example>& examples);

}  // namespace dultra::rewards
