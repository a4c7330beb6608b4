#include "dultra/planner_init/planner_init.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace dultra::planner_init {

namespace {

// Planner logits for one example, reusing the cached hidden states when present.
ad::Var example_logits(ad::Record& r, model::UnmaskPlanner& planner, model::Denoiser& model,
                       const PlannerLabelExample& ex) {
  model::DenoiserOutput den;
  if (ex.has_hidden) {
    den.hidden = r.constant(ex.hidden);
  } else {
    den = model.forward(r, ex.state.tokens);
  }
  return ad::take(planner.logits(r, den, ex.state.tokens, ex.time_cond), ex.window);
}

// Restores the frozen flags of a parameter set on scope exit.
class FreezeGuard {
 public:
  explicit FreezeGuard(ad::ParameterSet& p) : params_(p) {
    for (const auto& q : p) previous_.push_back(q.frozen);
    p.set_frozen(true);
  }
  ~FreezeGuard() {
    std::size_t i = 0;
    for (auto& q : params_) q.frozen = previous_[i++];
  }

 private:
  ad::ParameterSet& params_;
  std::vector<bool> previous_;
};

}  // namespace

std::vector<PlannerLabelExample> generate_labels(model::Denoiser& model,
                                                 const std::vector<std::vector<Token>>& prompts,
                                                 std::size_t completion_len,
                                                 const decoding::DecodeConfig& config, Rng& rng) {
  decoding::DecodeConfig heuristic = config;
  heuristic.mode = decoding::SelectionMode::kHeuristic;
  heuristic.validate();
  const Token mask = model.vocabulary().mask();
  std::vector<PlannerLabelExample> out;
  for (const auto& prompt : prompts) {
    MaskedSequence state = MaskedSequence::all_masked(prompt, completion_len, mask);
    for (std::size_t k = 0; state.masked_count(mask) > 0; ++k) {
      PlannerLabelExample ex;
      ex.state = state;
      {
        ad::Record r(ad::GradMode::kInference);
        auto den = model.forward(r, state.tokens);
        if (den.hidden.valid()) {
          ex.hidden = den.hidden.value();
          ex.has_hidden = true;
        }
      }
      decoding::StepResult step = decoding::decode_step(model, nullptr, state, heuristic, k, rng);
      if (!step.record.forced) {
        ex.window = step.record.candidates;
        ex.time_cond = step.record.time_cond;
        for (std::size_t c : ex.window) {
          ex.labels.push_back(std::binary_search(step.record.selected.begin(), step.record.selected.end(), c));
        }
        out.push_back(std::move(ex));
      }
      state = std::move(step.next);
    }
  }
  return out;
}

double positive_rate(const std::vector<PlannerLabelExample>& examples) {
  std::size_t pos = 0, total = 0;
  for (const auto& ex : examples) {
    pos += static_cast<std::size_t>(std::count(ex.labels.begin(), ex.labels.end(), 1));
    total += ex.labels.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(pos) / static_cast<double>(total);
}

WeightedBce weighted_bce_loss(ad::Record& r, ad::Var logits, std::span<const int> labels,
                              double w_pos_cap) {
  if (logits.value().size() != labels.size()) {
    throw ad::ShapeError("weighted_bce_loss: " + std::to_string(logits.value().size()) +
                         " logits for " + std::to_string(labels.size()) + " labels");
  }
  WeightedBce out;
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  out.positives = pos.size();
  out.negatives = neg.size();
  if (pos.empty()) {
    out.w_pos = w_pos_cap;
    out.capped = true;
  } else {
    out.w_pos = static_cast<double>(neg.size()) / static_cast<double>(pos.size());
  }
  ad::Var flat = ad::reshape(logits, {labels.size()});
  ad::Var total = r.constant(ad::Tensor::scalar(0.0));
  if (!pos.empty()) total = total + ad::sum(ad::log_sigmoid(ad::take(flat, pos))) * out.w_pos;
  if (!neg.empty()) total = total + ad::sum(ad::log_sigmoid(-ad::take(flat, neg)));
  out.loss = total * (-1.0 / static_cast<double>(labels.size()));
  return out;
}

PlannerInitMetrics train_planner_init(model::UnmaskPlanner& planner, model::Denoiser& model,
                                      const std::vector<PlannerLabelExample>& examples,
                                      const PlannerInitConfig& config,
                                      ad::OptimizerState& optimizer, Rng& rng) {
  PlannerInitMetrics metrics;
  if (config.epochs == 0 || examples.empty()) return metrics;
  FreezeGuard freeze(model.parameters());
  ad::ParameterSet& params = planner.parameters();
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = std::max<std::size_t>(config.batch_size, 1);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(start + bs, order.size());
      ad::Record r;
      std::vector<ad::Var> parts;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        const auto& ex = examples[order[i]];
        parts.push_back(example_logits(r, planner, model, ex));
        labels.insert(labels.end(), ex.labels.begin(), ex.labels.end());
      }
      ad::Var logits = parts.size() == 1 ? parts[0] : ad::concat(parts, 0);
      WeightedBce bce = weighted_bce_loss(r, logits, labels, config.w_pos_cap);
      metrics.capped_batches += bce.capped;
      if (!std::isfinite(bce.loss.item())) {
        throw ad::DomainError("planner init: non-finite loss in epoch " + std::to_string(epoch));
      }
      params.zero_grad();
      ad::accumulate_parameter_grads(r, ad::backward(r, bce.loss));
      ad::adamw_step(params, optimizer);
      epoch_loss += bce.loss.item();
      ++batches;
    }
    metrics.epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
  }
  params.zero_grad();
  return metrics;
}

Agreement evaluate_agreement(model::UnmaskPlanner& planner, model::Denoiser& model,
                             const std::vector<PlannerLabelExample>& examples) {
  Agreement a;
  std::size_t agree = 0;
  double prob_sum = 0.0;
  for (const auto& ex : examples) {
    ad::Record r(ad::GradMode::kInference);
    const ad::Tensor& z = example_logits(r, planner, model, ex).value();
    for (std::size_t k = 0; k < ex.labels.size(); ++k) {
      const double p = 1.0 / (1.0 + std::exp(-z[k]));
      agree += (p > 0.5) == (ex.labels[k] == 1);
      prob_sum += p;
      ++a.positions;
    }
  }
  if (a.positions) {
    a.label_accuracy = static_cast<double>(agree) / static_cast<double>(a.positions);
    a.mean_unmask_prob = prob_sum / static_cast<double>(a.positions);
  }
  return a;
}

void write_labels(const std::filesystem::path& path, const std::vector<PlannerLabelExample>& examples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write labels " + path.string());
  for (const auto& ex : examples) {
    nlohmann::json j = {{"tokens", ex.state.tokens},
                        {"prompt_len", ex.state.prompt_len},
                        {"window", ex.window},
                        {"labels", ex.labels},
                        {"time_cond", ex.time_cond}};
    out << j.dump() << '\n';
  }
}

std::vector<PlannerLabelExample> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open labels " + path.string());
  std::vector<PlannerLabelExample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    PlannerLabelExample ex;
    ex.state.tokens = j.at("tokens").get<std::vector<Token>>();
    ex.state.prompt_len = j.at("prompt_len").get<std::size_t>();
    ex.window = j.at("window").get<std::vector<std::size_t>>();
    ex.labels = j.at("labels").get<std::vector<int>>();
    ex.time_cond = j.at("time_cond").get<double>();
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace dultra::planner_init
