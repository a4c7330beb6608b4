#include "dultra/grpo/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dultra/likelihood/likelihood.hpp"

namespace dultra::grpo {

std::vector<double> compute_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw std::invalid_argument("compute_advantages: group size must be at least 2");
  // Identical rewards give exactly zero advantages (and hence a no-op update),
  // which r - mean does not guarantee in floating point.
  if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; })) {
    return std::vector<double>(rewards.size(), 0.0);
  }
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
  std::vector<double> out;
  out.reserve(rewards.size());
  for (double r : rewards) out.push_back(r - mean);
  return out;
}

std::vector<double> clip_advantages(std::span<const double> advantages, double clip) {
  std::vector<double> out(advantages.begin(), advantages.end());
  for (double& a : out) {
    if (a < clip) a = 0.0;
  }
  return out;
}

void assign_advantages(GroupBatch& batch, double clip) {
  std::vector<double> totals;
  for (const auto& r : batch.rewards) totals.push_back(r.r_total);
  batch.raw_advantages = compute_advantages(totals);
  batch.advantages = clip_advantages(batch.raw_advantages, clip);
}

namespace {

double loss_scale(const GroupBatch& batch) {
  if (batch.traces.empty()) throw std::invalid_argument("empty group");
  if (batch.advantages.size() != batch.traces.size()) {
    throw std::invalid_argument("group advantages not assigned");
  }
  const double len = static_cast<double>(batch.traces.front().completion_len);
  return -1.0 / (len * static_cast<double>(batch.traces.size()));
}

ad::Var ratio(ad::Var log_p) { return ad::exp(log_p - ad::stop_gradient(log_p)); }

}  // namespace

LossValue grpo_loss(ad::Record& r, const GroupBatch& batch, model::Denoiser& model,
                    model::UnmaskPlanner* planner, const decoding::DecodeConfig& config) {
  const double scale = loss_scale(batch);
  LossValue out;
  out.loss = r.constant(ad::Tensor::scalar(0.0));
  for (std::size_t g = 0; g < batch.size(); ++g) {
    auto ll = likelihood::rollout_log_likelihood(r, model, planner, batch.traces[g], config);
    out.clamped = out.clamped || ll.clamped;
    ad::Var sum = r.constant(ad::Tensor::scalar(0.0));
    for (const auto& step : ll.steps) sum = sum + ratio(step.total);
    out.loss = out.loss + sum * (scale * batch.advantages[g]);
  }
  return out;
}

LossValue reinforce_log_loss(ad::Record& r, const GroupBatch& batch, model::Denoiser& model,
                             model::UnmaskPlanner* planner, const decoding::DecodeConfig& config) {
  const double scale = loss_scale(batch);
  LossValue out;
  out.loss = r.constant(ad::Tensor::scalar(0.0));
  for (std::size_t g = 0; g < batch.size(); ++g) {
    auto ll = likelihood::rollout_log_likelihood(r, model, planner, batch.traces[g], config);
    out.clamped = out.clamped || ll.clamped;
    out.loss = out.loss + ll.total * (scale * batch.advantages[g]);
  }
  return out;
}

AccumulationResult accumulate_group_gradients(const GroupBatch& batch, model::Denoiser& model,
                                              model::UnmaskPlanner* planner,
                                              const decoding::DecodeConfig& config) {
  const double scale = loss_scale(batch);
  const Token mask = model.vocabulary().mask();
  AccumulationResult out;
  std::vector<std::vector<MaskedSequence>> states(batch.size());
  std::size_t max_steps = 0;
  for (std::size_t g = 0; g < batch.size(); ++g) {
    states[g] = decoding::replay_states(batch.traces[g], mask);
    max_steps = std::max(max_steps, batch.traces[g].nfe());
    out.loss += scale * batch.advantages[g] * static_cast<double>(batch.traces[g].nfe());
  }
  for (std::size_t n = 0; n < max_steps; ++n) {
    for (std::size_t g = 0; g < batch.size(); ++g) {
      const auto& trace = batch.traces[g];
      if (trace.nfe() <= n || batch.advantages[g] == 0.0) continue;
      const auto& step = trace.steps[n];
      const bool has_select = !step.forced && config.mode == decoding::SelectionMode::kPlanner;
      const bool has_token = !step.forced && config.temperature > 0.0 && !step.selected.empty();
      if (!has_select && !has_token) continue;
      ad::Record r;
      auto s = likelihood::step_log_likelihood(r, model, planner, states[g][n], step, config);
      out.clamped = out.clamped || s.clamped;
      ad::Var term = ratio(s.total) * (scale * batch.advantages[g]);
      const auto grads = ad::backward(r, term);
      ad::accumulate_parameter_grads(r, grads);
      ++out.backward_passes;
    }
  }
  return out;
}

RewardFn standard_reward(const rewards::TaskSpec& task, model::Teacher* teacher,
                         const rewards::RewardWeights& weights) {
  weights.validate();
  return [task, teacher, weights](std::span<const Token> prompt, const decoding::RolloutTrace& trace) {
    const auto completion = trace.completion();
    rewards::RewardParts parts;
    parts.task = rewards::task_reward(task, prompt, completion);
    parts.format = rewards::format_reward(completion, task);
    parts.step = rewards::efficiency_reward(trace.nfe());
    if (teacher != nullptr) {
      const double student = weights.beta == 0.0 ? 0.0 : trace.log_likelihood();
      parts.distill = rewards::distill_reward(*teacher, prompt, completion, student, weights.beta);
    }
    return rewards::total_reward(parts, weights, trace.nfe());
  };
}

RewardFn unmask_count_penalty() {
  return [](std::span<const Token>, const decoding::RolloutTrace& trace) {
    rewards::RewardBreakdown b;
    b.nfe = trace.nfe();
    std::size_t chosen = 0;
    for (const auto& s : trace.steps) {
      if (!s.forced) chosen += s.selected.size();
    }
    b.r_total = -static_cast<double>(chosen) / static_cast<double>(trace.completion_len);
    return b;
  };
}

void GrpoConfig::validate() const {
  if (group_size < 2) throw std::invalid_argument("group size must be at least 2");
  if (std::isnan(clip)) throw std::invalid_argument("clip threshold is NaN");
  decode.validate();
}

double mean_planner_probability(std::span<const decoding::RolloutTrace> traces) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& t : traces) {
    for (const auto& s : t.steps) {
      for (double p : s.planner_probs) {
        sum += p;
        ++n;
      }
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

GrpoTrainer::GrpoTrainer(model::Denoiser& model, model::UnmaskPlanner& planner, RewardFn reward,
                         const GrpoConfig& config)
    : model_(model),
      planner_(planner),
      reward_(std::move(reward)),
      config_(config),
      model_opt_(model.parameters(), config.model_optimizer),
      planner_opt_(planner.parameters(), config.planner_optimizer) {
  config_.validate();
}

GroupBatch GrpoTrainer::sample_group(std::span<const Token> prompt, std::size_t group_index) {
  GroupBatch batch;
  batch.prompt.assign(prompt.begin(), prompt.end());
  const std::size_t len = config_.completion_len;
  for (std::size_t g = 0; g < config_.group_size; ++g) {
    Rng rng(derive_seed(config_.seed, {group_index, g}));
    batch.traces.push_back(decoding::rollout(model_, &planner_, prompt, len, config_.decode, rng));
    batch.rewards.push_back(reward_(prompt, batch.traces.back()));
  }
  assign_advantages(batch, config_.clip);
  return batch;
}

namespace {

std::string group_dump(std::size_t index, const GroupBatch& batch) {
  std::ostringstream os;
  os << "group " << index << " prompt [" << format_tokens(batch.prompt) << "]";
  for (std::size_t g = 0; g < batch.size(); ++g) {
    os << "\n  rollout " << g << ": nfe " << batch.traces[g].nfe() << " reward " << batch.rewards[g].r_total
       << " advantage " << batch.advantages[g] << " completion [" << format_tokens(batch.traces[g].completion())
       << "]";
  }
  return os.str();
}

bool grads_finite(const ad::ParameterSet& params) {
  for (const auto& p : params) {
    if (!p.grad.all_finite()) return false;
  }
  return true;
}

}  // namespace

GroupMetrics GrpoTrainer::train_group(std::span<const Token> prompt) {
  const std::size_t index = groups_done_;
  ad::ParameterSet& mp = model_.parameters();
  ad::ParameterSet& pp = planner_.parameters();
  std::vector<bool> was_frozen;
  for (const auto& p : mp) was_frozen.push_back(p.frozen);
  if (!config_.train_model) mp.set_frozen(true);

  GroupBatch batch = sample_group(prompt, index);
  GroupMetrics m;
  m.group = index;
  const double G = static_cast<double>(batch.size());
  for (std::size_t g = 0; g < batch.size(); ++g) {
    const auto& r = batch.rewards[g];
    m.r_task += r.r_task / G;
    m.r_format += r.r_format / G;
    m.r_step += r.r_step / G;
    m.r_distill += r.r_distill / G;
    m.r_total += r.r_total / G;
    m.nfe += static_cast<double>(batch.traces[g].nfe()) / G;
    m.accuracy += (r.r_task > 0.0 ? 1.0 : 0.0) / G;
  }
  m.planner_prob = mean_planner_probability(batch.traces);

  const bool any = std::any_of(batch.advantages.begin(), batch.advantages.end(),
                               [](double a) { return a != 0.0; });
  if (any) {
    mp.zero_grad();
    pp.zero_grad();
    const AccumulationResult acc = accumulate_group_gradients(batch, model_, &planner_, config_.decode);
    m.loss = acc.loss;
    m.clamped = acc.clamped;
    if (!std::isfinite(acc.loss) || !grads_finite(mp) || !grads_finite(pp)) {
      throw ad::DomainError("non-finite GRPO loss or gradient in " + group_dump(index, batch));
    }
    if (config_.train_model) ad::adamw_step(mp, model_opt_);
    ad::adamw_step(pp, planner_opt_);
    mp.zero_grad();
    pp.zero_grad();
    m.updated = true;
  }
  for (std::size_t i = 0; i < mp.size(); ++i) mp[i].frozen = was_frozen[i];
  ++groups_done_;
  return m;
}

}  // namespace dultra::grpo
