#include <gtest/gtest.h>

#include <cmath>

#include "dultra/likelihood/enumerate.hpp"
#include "dultra/likelihood/likelihood.hpp"
#include "dultra/model/tabular.hpp"

namespace dultra::likelihood {
namespace {

struct Instance {
  model::TabularDenoiser den;
  model::TabularPlanner planner;
};

Instance random_instance(std::size_t vocab, std::size_t length, std::uint64_t seed) {
  Instance in{model::TabularDenoiser(Vocabulary(vocab), length, model::TabularDenoiser::Context::kFullState),
              model::TabularPlanner(Vocabulary(vocab), length, true)};
  Rng rng(seed);
  for (auto* ps : {&in.den.parameters(), &in.planner.parameters()}) {
    for (auto& p : *ps) {
      for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = rng.normal();
    }
  }
  return in;
}

decoding::DecodeConfig planner_config(std::size_t block, std::size_t cap, double temperature) {
  decoding::DecodeConfig c;
  c.mode = decoding::SelectionMode::kPlanner;
  c.block_size = block;
  c.max_steps = cap;
  c.temperature = temperature;
  return c;
}

TEST(StepTransitions, SumToOne) {
  auto in = random_instance(4, 3, 1);
  const auto c = planner_config(2, 4, 0.8);
  const MaskedSequence s = MaskedSequence::all_masked(std::vector<Token>{0}, 2, 3);
  for (std::size_t k : {0u, 3u}) {
    double total = 0.0;
    for (const auto& t : step_transitions(in.den, &in.planner, s, k, c)) total += t.probability;
    EXPECT_NEAR(total, 1.0, 1e-12) << "step " << k;
  }
}

TEST(Enumeration, NormalizedAndMatchesSampledTraces) {
  auto in = random_instance(4, 4, 2);
  const auto c = planner_config(2, 4, 0.9);
  const std::vector<Token> prompt{1};
  const auto e = enumerate_all_rollouts(in.den, &in.planner, prompt, 3, c);
  EXPECT_NEAR(e.total_probability, 1.0, 1e-9);
  Rng rng(3);
  for (int i = 0; i < 30; ++i) {
    const auto trace = decoding::rollout(in.den, &in.planner, prompt, 3, c, rng);
    EXPECT_NEAR(std::exp(trace.log_likelihood()), e.probability_of(trace), 1e-9);
    ad::Record r(ad::GradMode::kInference);
    const auto ll = rollout_log_likelihood(r, in.den, &in.planner, trace, c);
    EXPECT_NEAR(ll.total.item(), trace.log_likelihood(), 1e-9);
  }
}

TEST(Enumeration, HeuristicModeIsNormalized) {
  auto in = random_instance(4, 4, 4);
  decoding::DecodeConfig c;
  c.block_size = 3;
  c.threshold = 0.5;
  c.temperature = 1.0;
  const auto e = enumerate_all_rollouts(in.den, nullptr, std::vector<Token>{2}, 3, c);
  EXPECT_NEAR(e.total_probability, 1.0, 1e-9);
}

TEST(Enumeration, StepCountFollowsTruncatedGeometricLaw) {
  model::TabularDenoiser den(Vocabulary(3), 2, model::TabularDenoiser::Context::kNone);
  model::TabularPlanner planner(Vocabulary(3), 2, false);
  const double p = 0.3;
  planner.fill_probability(p);
  const std::size_t cap = 5;
  const auto c = planner_config(1, cap, 1.0);
  const auto e = enumerate_all_rollouts(den, &planner, std::vector<Token>{0}, 1, c);
  std::vector<double> by_nfe(cap + 1, 0.0);
  for (const auto& t : e.trajectories) by_nfe[t.steps.size()] += t.probability;
  for (std::size_t k = 1; k < cap; ++k) EXPECT_NEAR(by_nfe[k], std::pow(1 - p, k - 1) * p, 1e-12);
  EXPECT_NEAR(by_nfe[cap], std::pow(1 - p, cap - 1), 1e-12);
}

TEST(Enumeration, IndependentOneStepDecodeMixesModes) {
  // Two positions with marginals 0.5/0.5 over {A, C} and {B, D}.
  model::TabularDenoiser den(Vocabulary(5), 2, model::TabularDenoiser::Context::kNone);
  const std::vector<Token> masked{4, 4};
  den.set_distribution(masked, 0, std::vector<double>{0.5, 0.0, 0.5, 0.0, 0.0});
  den.set_distribution(masked, 1, std::vector<double>{0.0, 0.5, 0.0, 0.5, 0.0});
  model::TabularPlanner planner(Vocabulary(5), 2, false);
  planner.set_probability(masked, 0, 1.0);
  planner.set_probability(masked, 1, 1.0);
  const auto c = planner_config(2, 4, 1.0);
  const auto e = enumerate_all_rollouts(den, &planner, {}, 2, c);
  const auto dist = marginal_outcome_distribution(e);
  double cross = 0.0;
  for (const auto& [seq, prob] : dist) {
    if (!((seq[0] == 0 && seq[1] == 1) || (seq[0] == 2 && seq[1] == 3))) cross += prob;
  }
  EXPECT_NEAR(cross, 0.5, 1e-9);
}

TEST(Enumeration, RejectsOversizedInstances) {
  auto in = random_instance(4, 4, 5);
  EXPECT_THROW(enumerate_all_rollouts(in.den, &in.planner, std::vector<Token>{0}, 3,
                                      planner_config(3, 40, 1.0), 1e3),
               std::invalid_argument);
  EXPECT_GT(trajectory_count_bound(3, 4, planner_config(3, 4, 1.0)), 1.0);
}

TEST(RolloutLikelihood, AlphaScaledSelection) {
  auto in = random_instance(4, 4, 6);
  auto c = planner_config(3, 4, 1.0);
  c.alpha = 1.7;
  const std::vector<Token> prompt{0};
  const auto e = enumerate_all_rollouts(in.den, &in.planner, prompt, 3, c);
  EXPECT_NEAR(e.total_probability, 1.0, 1e-9);
  Rng rng(8);
  for (int i = 0; i < 20; ++i) {
    const auto trace = decoding::rollout(in.den, &in.planner, prompt, 3, c, rng);
    ad::Record r(ad::GradMode::kInference);
    const auto ll = rollout_log_likelihood(r, in.den, &in.planner, trace, c);
    EXPECT_NEAR(std::exp(ll.total.item()), e.probability_of(trace), 1e-9);
  }
}

TEST(RolloutLikelihood, GradientMatchesFiniteDifferences) {
  // Position-wise tables: every entry can influence the trace probability.
  model::TabularDenoiser den(Vocabulary(4), 4, model::TabularDenoiser::Context::kNone);
  model::TabularPlanner planner(Vocabulary(4), 4, false);
  Rng init(7);
  for (auto* ps : {&den.parameters(), &planner.parameters()}) {
    for (std::size_t i = 0; i < (*ps)[0].value.size(); ++i) (*ps)[0].value[i] = init.normal();
  }
  const auto c = planner_config(3, 4, 0.8);
  const std::vector<Token> prompt{0};
  Rng rng(11);
  const auto trace = decoding::rollout(den, &planner, prompt, 3, c, rng);
  ad::Record r;
  ad::Var v = rollout_log_likelihood(r, den, &planner, trace, c).total;
  ad::accumulate_parameter_grads(r, ad::backward(r, v));
  double worst = 0.0;
  std::size_t checked = 0;
  for (ad::Parameter* p : {&den.parameters()[0], &planner.parameters()[0]}) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      if (p == &den.parameters()[0] && i % 4 == 3) continue;  // mask column is pinned
      const double orig = p->value[i];
      const double h = 1e-5;
      auto eval = [&](double x) {
        p->value[i] = x;
        ad::Record rr(ad::GradMode::kInference);
        return rollout_log_likelihood(rr, den, &planner, trace, c).total.item();
      };
      const double fd = (eval(orig + h) - eval(orig - h)) / (2 * h);
      p->value[i] = orig;
      worst = std::max(worst, std::abs(fd - p->grad[i]) / std::max({std::abs(fd), std::abs(p->grad[i]), 1e-6}));
      ++checked;
    }
  }
  EXPECT_EQ(checked, 16u);
  EXPECT_LT(worst, 1e-4);
}

}  // namespace
}  // namespace dultra::likelihood
