#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "dultra/autodiff/optimizer.hpp"
#include "dultra/autodiff/record.hpp"
#include "dultra/decoding/decode.hpp"
#include "dultra/model/interfaces.hpp"
#include "dultra/rewards/rewards.hpp"

namespace dultra::grpo {

inline constexpr double kNoClip = -std::numeric_limits<double>::infinity();

/// A^g = r^g - mean(r). No scale normalization. Throws for fewer than 2 rewards.
std::vector<double> compute_advantages(std::span<const double> rewards);

/// Sets advantages below C to 0.
std::vector<double> clip_advantages(std::span<const double> advantages, double clip);

struct GroupBatch {
  std::vector<Token> prompt;
  std::vector<decoding::RolloutTrace> traces;
  std::vector<rewards::RewardBreakdown> rewards;
  std::vector<double> raw_advantages;
  std::vector<double> advantages;  // after clipping

  std::size_t size() const { return traces.size(); }
};

/// Fills raw and clipped advantages from the batch's total rewards.
void assign_advantages(GroupBatch& batch, double clip);

struct LossValue {
  ad::Var loss;
  bool clamped = false;
};

/// -(1/(|o| G)) sum_g A^g sum_k p(o^{g,k}) / sg(p(o^{g,k})), built on one
/// record. Each ratio evaluates to exactly 1; its gradient is that of log p.
LossValue grpo_loss(ad::Record& record, const GroupBatch& batch, model::Denoiser& model,
                    model::UnmaskPlanner* planner, const decoding::DecodeConfig& config);

/// -(1/(|o| G)) sum_g A^g log p(o^g): the log-form REINFORCE objective.
LossValue reinforce_log_loss(ad::Record& record, const GroupBatch& batch, model::Denoiser& model,
                             model::UnmaskPlanner* planner, const decoding::DecodeConfig& config);

struct AccumulationResult {
  double loss = 0.0;
  std::size_t backward_passes = 0;
  bool clamped = false;
};

/// Adds the gradient of grpo_loss into Parameter::grad of the model and
/// planner, one step record at a time: for n = 1..max K^g, every trace with
/// K^g >= n contributes its n-th step. Traces with zero advantage and steps
/// without a differentiable factor are skipped.
AccumulationResult accumulate_group_gradients(const GroupBatch& batch, model::Denoiser& model,
                                              model::UnmaskPlanner* planner,
                                              const decoding::DecodeConfig& config);

/// Scores one rollout of a prompt.
using RewardFn =
    std::function<rewards::RewardBreakdown(std::span<const Token> prompt, const decoding::RolloutTrace&)>;

/// Task, format, efficiency and distillation rewards combined with `weights`.
/// `teacher` may be null, in which case the distillation part is 0.
RewardFn standard_reward(const rewards::TaskSpec& task, model::Teacher* teacher,
                         const rewards::RewardWeights& weights);

/// Reward that only penalizes unmasking: minus the fraction of the completion
/// chosen by non-forced steps. Tokens left to the forced final step are free,
/// so the best policy never unmasks.
RewardFn unmask_count_penalty();

struct GrpoConfig {
  std::size_t group_size = 12;
  double clip = 0.0;
  std::size_t total_groups = 300;
  std::size_t completion_len = rewards::toy::kCompletionLen;
  decoding::DecodeConfig decode{.mode = decoding::SelectionMode::kPlanner};
  ad::AdamWConfig model_optimizer{.lr = 1e-4, .weight_decay = 0.0};
  ad::AdamWConfig planner_optimizer{.lr = 1e-3, .weight_decay = 0.0};
  bool train_model = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GroupMetrics {
  std::size_t group = 0;
  double r_task = 0.0;
  double r_format = 0.0;
  double r_step = 0.0;
  double r_distill = 0.0;
  double r_total = 0.0;
  double nfe = 0.0;
  double accuracy = 0.0;       // fraction of rollouts with positive task reward
  double planner_prob = 0.0;   // mean raw unmask probability over sampled candidates
  double loss = 0.0;
  bool updated = false;        // false when every clipped advantage was zero
  bool clamped = false;
};

/// The group loop: rollouts on the current (frozen) parameters, rewards,
/// advantages, step-wise gradient accumulation, one optimizer update.
class GrpoTrainer {
 public:
  GrpoTrainer(model::Denoiser& model, model::UnmaskPlanner& planner, RewardFn reward,
              const GrpoConfig& config);

  /// Runs the next group on `prompt`. Rollout g of group n draws from
  /// derive_seed(seed, {n, g}). Throws DomainError with a group dump when the
  /// loss or a gradient is not finite.
  GroupMetrics train_group(std::span<const Token> prompt);
  GroupBatch sample_group(std::span<const Token> prompt, std::size_t group_index);

  std::size_t groups_done() const { return groups_done_; }
  void set_groups_done(std::size_t n) { groups_done_ = n; }
  ad::OptimizerState& model_optimizer() { return model_opt_; }
  ad::OptimizerState& planner_optimizer() { return planner_opt_; }
  const GrpoConfig& config() const { return config_; }

 private:
  model::Denoiser& model_;
  model::UnmaskPlanner& planner_;
  RewardFn reward_;
  GrpoConfig config_;
  ad::OptimizerState model_opt_;
  ad::OptimizerState planner_opt_;
  std::size_t groups_done_ = 0;
};

/// Mean raw planner probability over every non-forced candidate of the traces.
double mean_planner_probability(std::span<const decoding::RolloutTrace> traces);

}  // namespace dultra::grpo
