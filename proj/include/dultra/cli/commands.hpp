#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dultra/cli/config.hpp"
#include "dultra/grpo/grpo.hpp"

namespace dultra::cli {

// Run directory layout (all commands read and write under one directory):
//   config.yaml                   resolved configuration of the last command
//   corpus.txt                    pretraining examples
//   mdlm.{bin,json}               pretrained denoiser
//   teacher.{bin,json}            causal teacher
//   pretrain_loss.csv             step,loss
//   teacher_ppl.csv               step,perplexity
//   labels.jsonl                  planner-init training labels
//   planner.{bin,json}            initialized planner
//   planner_init.json             agreement report
//   grpo/{model,planner,model_opt,planner_opt}.{bin,json}, grpo/state.json
//   grpo_metrics.csv              one row per group
//   eval.csv                      mode,alpha,trials,accuracy,nfe,forced_rate
//   traces/                       decoding traces saved by evaluate

struct PretrainReport {
  std::size_t loss_rows = 0;
  double final_loss = 0.0;
  double final_perplexity = 0.0;
};

/// Generates the corpus, trains the denoiser and the teacher, and writes
/// their checkpoints and loss curves to config.out.
PretrainReport cmd_pretrain(const ExperimentConfig& config);

struct PlannerInitReport {
  std::size_t train_examples = 0;
  std::size_t heldout_examples = 0;
  double positive_rate = 0.0;
  double heldout_agreement = 0.0;
  double mean_unmask_prob = 0.0;
  double no_forced_rate = 0.0;  // eval prompts whose planner rollout never hit the step cap
  std::size_t capped_batches = 0;
  std::string backbone_digest_before;
  std::string backbone_digest_after;
};

/// Labels heuristic rollouts of the checkpointed denoiser, trains the planner
/// and reports held-out agreement. Reads mdlm from `checkpoint`.
PlannerInitReport cmd_init_planner(const ExperimentConfig& config,
                                   const std::filesystem::path& checkpoint);

struct GrpoReport {
  std::size_t groups_run = 0;
  std::size_t groups_done = 0;
  std::vector<grpo::GroupMetrics> metrics;
};

/// Runs GRPO until grpo.total_groups groups are done. Starts from mdlm,
/// teacher and planner in `checkpoint`; with `resume`, continues from the
/// grpo/ checkpoint in config.out, including the group counter and the
/// optimizer moments. `max_groups` stops early after that many groups.
GrpoReport cmd_train_grpo(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                          bool resume, std::optional<std::size_t> max_groups = std::nullopt);

struct EvalRow {
  std::string mode;
  double alpha = 1.0;
  std::size_t trials = 0;
  double accuracy = 0.0;
  double nfe = 0.0;
  double forced_rate = 0.0;  // fraction of rollouts that reached the step cap
};

/// Decodes the eval prompts `trials` times per alpha and writes eval.csv.
/// Planner mode uses grpo/ parameters when present in `checkpoint`, otherwise
/// mdlm + planner. Heuristic mode ignores alpha and runs one trial.
std::vector<EvalRow> cmd_evaluate(const ExperimentConfig& config,
                                  const std::filesystem::path& checkpoint);

/// positions x steps matrix with 1 where a completion position is newly
/// unmasked. Throws std::invalid_argument if the trace does not replay.
std::vector<std::vector<int>> unmask_matrix(const decoding::RolloutTrace& trace);

/// Writes one CSV per trace file into `out_dir` (same stem, .csv extension).
/// Returns the written paths.
std::vector<std::filesystem::path> cmd_export_heatmap(const std::vector<std::filesystem::path>& traces,
                                                      const std::filesystem::path& out_dir);

struct BimodalReport {
  double one_step_cross_mass = 0.0;
  double sequential_cross_mass = 0.0;
  double initial_cross_mass = 0.0;   // planner policy before GRPO
  double post_grpo_cross_mass = 0.0;
  double post_grpo_valid_mass = 0.0;
  double post_grpo_mean_nfe = 0.0;
  std::size_t groups = 0;
};

/// Two-position bimodal target {AB, CD} with an exact tabular denoiser.
/// Enumerates the outcome distributions of one-step and sequential decoding,
/// then trains a state-dependent planner with GRPO and enumerates again.
BimodalReport run_bimodal_demo(const BimodalSection& config, std::uint64_t seed);
BimodalReport cmd_demo_bimodal(const ExperimentConfig& config);

/// Writes the resolved configuration to `<out>/config.yaml`.
void echo_config(const ExperimentConfig& config);

}  // namespace dultra::cli
