#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dultra/decoding/decode.hpp"
#include "dultra/grpo/grpo.hpp"
#include "dultra/mdlm/schedule.hpp"
#include "dultra/model/transformer.hpp"
#include "dultra/rewards/rewards.hpp"

namespace dultra::cli {

/// Raised for configuration problems; the CLI maps it to the usage exit code.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TaskSection {
  rewards::TaskKind kind = rewards::TaskKind::kModularAddition;
  rewards::StyleConfig style{};
  std::size_t corpus_size = 500;
  std::size_t eval_prompts = 100;
};

struct PretrainSection {
  std::size_t steps = 3000;
  std::size_t batch_size = 8;
  std::size_t log_every = 100;
  double lr = 2e-3;
  std::size_t warmup_steps = 100;
  bool cosine_decay = true;
  double clip_norm = 1.0;
  mdlm::ScheduleKind schedule = mdlm::ScheduleKind::kLinear;
};

struct TeacherSection {
  model::BackboneConfig backbone{.n_layers = 2, .attention = model::Attention::kCausal};
  std::size_t steps = 1500;
  std::size_t batch_size = 8;
  std::size_t log_every = 100;
  double lr = 1e-3;
};

struct PlannerInitSection {
  std::size_t train_prompts = 200;
  std::size_t heldout_prompts = 50;
  std::size_t epochs = 30;
  std::size_t batch_size = 4;
  double lr = 1e-3;
  double w_pos_cap = 100.0;
};

enum class RewardKind { kStandard, kUnmaskCountPenalty };

struct GrpoSection {
  std::size_t group_size = 12;
  double clip = 0.0;
  std::size_t total_groups = 300;
  double model_lr = 1e-4;
  double planner_lr = 1e-2;
  bool train_model = true;
  std::size_t checkpoint_every = 50;
  RewardKind reward = RewardKind::kStandard;
};

struct EvaluateSection {
  std::vector<double> alphas{0.5, 1.0, 2.0, 4.0};
  std::size_t trials = 5;
  std::size_t saved_traces = 3;  // traces written per alpha, from the first trial
};

struct BimodalSection {
  std::size_t groups = 400;
  std::size_t group_size = 8;
  double lr = 0.3;
  double clip = 0.0;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out = "runs/default";
  TaskSection task;
  model::BackboneConfig backbone{.max_len = 32};
  model::PlannerConfig planner{};
  TeacherSection teacher;
  PretrainSection pretrain;
  decoding::DecodeConfig decode{};
  PlannerInitSection planner_init;
  GrpoSection grpo;
  rewards::RewardWeights weights{};
  std::string reward_preset = "default";
  EvaluateSection evaluate;
  BimodalSection bimodal;

  /// Throws ConfigError when a value is out of range or inconsistent.
  void validate() const;
};

/// Reads a YAML file. Keys that are absent keep their defaults; unknown keys
/// are rejected. Throws ConfigError naming the path or key on failure.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& yaml_text);
std::string dump_config(const ExperimentConfig& config);

}  // namespace dultra::cli
