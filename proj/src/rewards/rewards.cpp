#include "dultra/rewards/rewards.hpp"

#include <cmath>
#include <stdexcept>

namespace dultra::rewards {

double task_reward(const TaskSpec& task, std::span<const Token> prompt,
                   std::span<const Token> completion) {
  return task.verify(prompt, completion) ? kCorrectReward : 0.0;
}

double format_reward(std::span<const Token> completion, const TaskSpec& task) {
  return extract_answer(completion, task.begin_marker, task.end_marker) ? kFormatReward : 0.0;
}

double efficiency_reward(std::size_t nfe) {
  if (nfe == 0) throw std::invalid_argument("efficiency_reward: nfe must be at least 1");
  return -static_cast<double>(nfe) / kStepScale;
}

double distill_reward(model::Teacher& teacher, std::span<const Token> prompt,
                      std::span<const Token> completion, double student_logprob, double beta,
                      std::optional<Token> pad) {
  if (completion.empty()) throw std::invalid_argument("distill_reward: empty completion");
  ad::Record r(ad::GradMode::kInference);
  const ad::Tensor& lp = teacher.completion_logprobs(r, prompt, completion).value();
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < completion.size(); ++i) {
    if (pad && completion[i] == *pad) continue;
    sum += lp[i];
    ++count;
  }
  if (count == 0) {
    for (std::size_t i = 0; i < completion.size(); ++i) sum += lp[i];
    count = completion.size();
  }
  const double student = beta == 0.0 ? 0.0 : beta * student_logprob;
  return (sum - student) / static_cast<double>(count);
}

RewardWeights RewardWeights::coding_weights() {
  RewardWeights w;
  w.task = 3.0;
  w.step = 0.1;
  return w;
}

RewardWeights RewardWeights::preset(const std::string& name) {
  if (name == "default") return RewardWeights{};
  if (name == "coding-weights") return coding_weights();
  throw std::invalid_argument("unknown reward preset '" + name + "'");
}

void RewardWeights::validate() const {
  for (double w : {task, format, step, distill, beta}) {
    if (!std::isfinite(w)) throw std::invalid_argument("reward weights must be finite");
  }
}

RewardBreakdown total_reward(const RewardParts& p, const RewardWeights& w, std::size_t nfe) {
  RewardBreakdown b;
  b.r_task = p.task;
  b.r_format = p.format;
  b.r_step = p.step;
  b.r_distill = p.distill;
  b.r_total = w.task * p.task + w.format * p.format + w.step * p.step + w.distill * p.distill;
  b.nfe = nfe;
  return b;
}

TeacherMetrics pretrain_teacher(model::Teacher& teacher, const std::vector<Example>& corpus,
                                const TeacherTrainConfig& config, ad::OptimizerState& optimizer,
                                Rng& rng) {
  TeacherMetrics metrics;
  if (config.steps == 0) return metrics;
  if (corpus.empty()) throw std::invalid_argument("pretrain_teacher: empty corpus");
  ad::ParameterSet& params = teacher.parameters();
  double window_nll = 0.0;
  std::size_t window_tokens = 0;
  const std::size_t log_every = config.log_every ? config.log_every : 1;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    params.zero_grad();
    std::vector<const Example*> batch;
    std::size_t tokens = 0;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      batch.push_back(&corpus[rng.index(corpus.size())]);
      tokens += batch.back()->completion.size();
    }
    double step_nll = 0.0;
    for (const Example* exp : batch) {
      const Example& ex = *exp;
      ad::Record r;
      ad::Var nll = -ad::sum(teacher.completion_logprobs(r, ex.prompt, ex.completion));
      step_nll += nll.item();
      ad::accumulate_parameter_grads(r, ad::backward(r, nll * (1.0 / static_cast<double>(tokens))));
    }
    if (!std::isfinite(step_nll)) {
      throw ad::DomainError("pretrain_teacher: non-finite loss at step " + std::to_string(step));
    }
    ad::adamw_step(params, optimizer);
    window_nll += step_nll;
    window_tokens += tokens;
    if (step % log_every == 0 || step == config.steps) {
      metrics.curve.push_back({step, std::exp(window_nll / static_cast<double>(window_tokens))});
      window_nll = 0.0;
      window_tokens = 0;
    }
  }
  params.zero_grad();
  return metrics;
}

double mean_completion_logprob(model::Teacher& teacher, const std::vector<Example>& examples) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const Example& ex : examples) {
    ad::Record r(ad::GradMode::kInference);
    const ad::Tensor& lp = teacher.completion_logprobs(r, ex.prompt, ex.completion).value();
    for (std::size_t i = 0; i < lp.size(); ++i) sum += lp[i];
    count += lp.size();
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace dultra::rewards
