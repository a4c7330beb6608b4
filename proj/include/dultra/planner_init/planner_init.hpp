#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "dultra/autodiff/optimizer.hpp"
#include "dultra/autodiff/record.hpp"
#include "dultra/core/rng.hpp"
#include "dultra/decoding/decode.hpp"
#include "dultra/model/interfaces.hpp"

namespace dultra::planner_init {

/// One heuristic decoding state with the heuristic's choice on its window.
struct PlannerLabelExample {
  MaskedSequence state;
  std::vector<std::size_t> window;
  std::vector<int> labels;  // 1 where the heuristic unmasks, per window position
  double time_cond = 0.0;
  ad::Tensor hidden;        // cached backbone hidden states (empty for tabular models)
  bool has_hidden = false;
};

/// Runs heuristic-mode rollouts from each prompt and records every step's
/// window and labels. The forced final step, if reached, is not labeled.
std::vector<PlannerLabelExample> generate_labels(model::Denoiser& model,
                                                 const std::vector<std::vector<Token>>& prompts,
                                                 std::size_t completion_len,
                                                 const decoding::DecodeConfig& config, Rng& rng);

double positive_rate(const std::vector<PlannerLabelExample>& examples);

struct WeightedBce {
  ad::Var loss;
  double w_pos = 1.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  bool capped = false;  // no positives in the batch; w_pos set to the cap
};

/// Mean over all entries of -(w_pos * y * log p + (1 - y) * log(1 - p)) with
/// p = sigmoid(logits) and w_pos = #negatives / #positives of this batch.
WeightedBce weighted_bce_loss(ad::Record& record, ad::Var logits, std::span<const int> labels,
                              double w_pos_cap = 100.0);

struct PlannerInitConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 4;
  double w_pos_cap = 100.0;
};

struct PlannerInitMetrics {
  std::vector<double> epoch_loss;
  std::size_t capped_batches = 0;
};

/// Trains only the planner on the label set. The denoiser's parameters are
/// frozen for the duration and left bitwise unchanged.
PlannerInitMetrics train_planner_init(model::UnmaskPlanner& planner, model::Denoiser& model,
                                      const std::vector<PlannerLabelExample>& examples,
                                      const PlannerInitConfig& config,
                                      ad::OptimizerState& optimizer, Rng& rng);

struct Agreement {
  double label_accuracy = 0.0;  // per window position, threshold 0.5
  double mean_unmask_prob = 0.0;
  std::size_t positions = 0;
};

Agreement evaluate_agreement(model::UnmaskPlanner& planner, model::Denoiser& model,
                             const std::vector<PlannerLabelExample>& examples);

void write_labels(const std::filesystem::path& path, const std::vector<PlannerLabelExample>& examples);
std::vector<PlannerLabelExample> read_labels(const std::filesystem::path& path);

}  // namespace dultra::planner_init
