#include "dultra/likelihood/enumerate.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

namespace dultra::likelihood {

namespace {

constexpr std::size_t kMaxCompletion = 4;
constexpr std::size_t kMaxVocab = 6;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Token distribution per position row: probabilities under temperature
// scaling, or a point mass on the argmax when decoding greedily.
std::vector<double> token_distribution(const double* row, std::size_t m, double temperature,
                                       bool greedy) {
  std::vector<double> p(m, 0.0);
  if (greedy) {
    p[static_cast<std::size_t>(std::max_element(row, row + m) - row)] = 1.0;
    return p;
  }
  double mx = row[0] / temperature;
  for (std::size_t v = 1; v < m; ++v) mx = std::max(mx, row[v] / temperature);
  double total = 0.0;
  for (std::size_t v = 0; v < m; ++v) total += std::exp(row[v] / temperature - mx);
  const double lse = mx + std::log(total);
  for (std::size_t v = 0; v < m; ++v) p[v] = std::exp(row[v] / temperature - lse);
  return p;
}

}  // namespace

std::vector<Transition> step_transitions(model::Denoiser& model, model::UnmaskPlanner* planner,
                                         const MaskedSequence& state, std::size_t step_index,
                                         const decoding::DecodeConfig& config) {
  const Token mask = model.vocabulary().mask();
  const std::size_t cap = config.step_cap(state.completion_len());
  const bool forced = step_index + 1 == cap;
  ad::Record graph(ad::GradMode::kInference);
  const model::DenoiserOutput out = model.forward(graph, state.tokens);
  const ad::Tensor& logits = out.logits.value();
  const std::size_t m = logits.last_dim();

  // Selection subsets with their probabilities.
  std::vector<std::pair<std::vector<std::size_t>, double>> subsets;
  if (forced) {
    subsets.emplace_back(state.masked_positions(mask), 1.0);
  } else {
    const auto cands = decoding::candidate_positions(state, mask, config.block_size);
    if (config.mode == decoding::SelectionMode::kHeuristic) {
      subsets.emplace_back(decoding::confidence_select(logits, cands, config.threshold), 1.0);
    } else {
      const ad::Tensor& z = planner->logits(graph, out, state.tokens, state.masked_fraction(mask)).value();
      std::vector<double> p;
      for (std::size_t c : cands) p.push_back(std::min(config.alpha * sigmoid(z[c]), 1.0));
      for (std::uint64_t bits = 0; bits < (1ULL << cands.size()); ++bits) {
        double prob = 1.0;
        std::vector<std::size_t> sel;
        for (std::size_t k = 0; k < cands.size(); ++k) {
          if (bits >> k & 1) {
            prob *= p[k];
            sel.push_back(cands[k]);
          } else {
            prob *= 1.0 - p[k];
          }
        }
        if (prob > 0.0) subsets.emplace_back(std::move(sel), prob);
      }
    }
  }

  const bool greedy = forced || config.temperature == 0.0;
  std::vector<Transition> result;
  for (auto& [sel, prob] : subsets) {
    std::vector<std::vector<double>> dists;
    for (std::size_t pos : sel) dists.push_back(token_distribution(logits.raw() + pos * m, m, config.temperature, greedy));
    Transition t;
    t.selected = sel;
    t.tokens.resize(sel.size());
    std::function<void(std::size_t, double)> assign = [&](std::size_t j, double p) {
      if (j == sel.size()) {
        t.probability = p;
        result.push_back(t);
        return;
      }
      for (Token v = 0; v < m; ++v) {
        if (dists[j][v] == 0.0) continue;
        t.tokens[j] = v;
        assign(j + 1, p * dists[j][v]);
      }
    };
    assign(0, prob);
  }
  return result;
}

std::string trajectory_key(const std::vector<StepChoice>& steps) {
  std::string key;
  for (const auto& s : steps) {
    for (std::size_t j = 0; j < s.selected.size(); ++j) {
      key += std::to_string(s.selected[j]) + ':' + std::to_string(s.tokens[j]) + ',';
    }
    key += '|';
  }
  return key;
}

std::string trajectory_key(const decoding::RolloutTrace& trace) {
  std::vector<StepChoice> steps;
  for (const auto& s : trace.steps) steps.push_back({s.selected, s.tokens});
  return trajectory_key(steps);
}

double Enumeration::probability_of(const decoding::RolloutTrace& trace) const {
  auto it = index.find(trajectory_key(trace));
  return it == index.end() ? 0.0 : trajectories[it->second].probability;
}

double trajectory_count_bound(std::size_t completion_len, std::size_t vocab,
                              const decoding::DecodeConfig& config) {
  const std::size_t cap = config.step_cap(completion_len);
  const double tokens = config.temperature == 0.0 ? 1.0 : static_cast<double>(vocab - 1);
  // bound[k][n]: trajectories from step k with n masked positions.
  std::vector<std::vector<double>> bound(cap + 1, std::vector<double>(completion_len + 1, 0.0));
  for (std::size_t k = cap; k-- > 0;) {
    for (std::size_t n = 0; n <= completion_len; ++n) {
      if (n == 0) {
        bound[k][n] = 1.0;
      } else if (k + 1 == cap) {
        bound[k][n] = 1.0;
      } else {
        const std::size_t w = std::min(config.block_size, n);
        double total = 0.0, binom = 1.0;
        for (std::size_t j = 0; j <= w; ++j) {
          total += binom * std::pow(tokens, static_cast<double>(j)) * bound[k + 1][n - j];
          binom = binom * static_cast<double>(w - j) / static_cast<double>(j + 1);
        }
        bound[k][n] = total;
      }
    }
  }
  return bound[0][completion_len];
}

Enumeration enumerate_all_rollouts(model::Denoiser& model, model::UnmaskPlanner* planner,
                                   std::span<const Token> prompt, std::size_t completion_len,
                                   const decoding::DecodeConfig& config, double max_trajectories) {
  config.validate();
  const Vocabulary& vocab = model.vocabulary();
  if (completion_len == 0 || completion_len > kMaxCompletion || vocab.size > kMaxVocab) {
    throw std::invalid_argument("enumerate_all_rollouts: supports completion length 1..4 and vocabulary <= 6");
  }
  if (config.mode == decoding::SelectionMode::kPlanner && planner == nullptr) {
    throw std::invalid_argument("enumerate_all_rollouts: planner mode without a planner");
  }
  const double bound = trajectory_count_bound(completion_len, vocab.size, config);
  if (bound > max_trajectories) {
    throw std::invalid_argument("enumerate_all_rollouts: up to " + std::to_string(bound) +
                                " trajectories exceeds the limit of " + std::to_string(max_trajectories));
  }
  Enumeration out;
  std::vector<StepChoice> path;
  std::function<void(const MaskedSequence&, std::size_t, double)> visit =
      [&](const MaskedSequence& state, std::size_t k, double prob) {
        if (state.masked_count(vocab.mask()) == 0) {
          out.index.emplace(trajectory_key(path), out.trajectories.size());
          out.trajectories.push_back({path, state.tokens, prob});
          out.total_probability += prob;
          return;
        }
        for (const Transition& t : step_transitions(model, planner, state, k, config)) {
          MaskedSequence next = state;
          for (std::size_t j = 0; j < t.selected.size(); ++j) next.tokens[t.selected[j]] = t.tokens[j];
          path.push_back({t.selected, t.tokens});
          visit(next, k + 1, prob * t.probability);
          path.pop_back();
        }
      };
  visit(MaskedSequence::all_masked(prompt, completion_len, vocab.mask()), 0, 1.0);
  return out;
}

std::map<std::vector<Token>, double> marginal_outcome_distribution(const Enumeration& enumeration) {
  std::map<std::vector<Token>, double> dist;
  for (const auto& t : enumeration.trajectories) dist[t.final_tokens] += t.probability;
  return dist;
}

nlohmann::json enumeration_to_json(const Enumeration& enumeration) {
  nlohmann::json traj = nlohmann::json::array();
  for (const auto& t : enumeration.trajectories) {
    traj.push_back({{"key", trajectory_key(t.steps)}, {"final", t.final_tokens}, {"probability", t.probability}});
  }
  return {{"total_probability", enumeration.total_probability}, {"trajectories", traj}};
}

}  // namespace dultra::likelihood
