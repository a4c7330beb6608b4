// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if all pass.
//
// Criteria 6-9 and 11 share one seeded toy pipeline (pretrain, planner init,
// GRPO) built from configs/default.yaml in a temporary run directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "dultra/autodiff/checkpoint.hpp"
#include "dultra/cli/commands.hpp"
#include "dultra/decoding/trace_io.hpp"
#include "dultra/grpo/grpo.hpp"
#include "dultra/likelihood/enumerate.hpp"
#include "dultra/likelihood/likelihood.hpp"
#include "dultra/mdlm/losses.hpp"
#include "dultra/mdlm/process.hpp"
#include "dultra/model/tabular.hpp"
#include "dultra/model/transformer.hpp"
#include "dultra/planner_init/planner_init.hpp"

namespace {

using namespace dultra;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("FAILED ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int failures = 0;

void run(int id, const char* title, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  failures += !o.pass;
  std::printf("criterion %2d %-28s %s  [%.1fs] %s\n", id, title, o.pass ? "PASS" : "FAIL", secs, o.detail.c_str());
  std::fflush(stdout);
}

// ---- helpers ----------------------------------------------------------------

void randomize(ad::ParameterSet& ps, Rng& rng, double scale = 1.0) {
  for (auto& p : ps) {
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = scale * rng.normal();
  }
}

std::vector<double> gradients(const std::vector<ad::ParameterSet*>& sets,
                              const std::function<ad::Var(ad::Record&)>& loss) {
  for (auto* s : sets) s->zero_grad();
  ad::Record rec;
  ad::Var root = loss(rec);
  ad::accumulate_parameter_grads(rec, ad::backward(rec, root));
  std::vector<double> out;
  for (auto* s : sets) {
    for (auto& p : *s) out.insert(out.end(), p.grad.data().begin(), p.grad.data().end());
  }
  return out;
}

struct FdResult {
  double max_rel = 0.0;
  double max_rel_fixed_floor = 0.0;  // same comparison with the floor held at 1e-6
  std::size_t checked = 0;
};

// Central differences of `value` on `samples` random scalar entries, against
// the analytic gradient of `analytic` at the unperturbed point.
//
// The relative-error denominator is floored at the smallest gradient the
// difference quotient can resolve to `tol`: rounding in f(w +- h) leaves an
// error of about eps |f| / h, so below |g| = eps |f| / (h tol) the comparison
// is effectively absolute at that noise level.
FdResult fd_compare(const std::vector<ad::ParameterSet*>& sets,
                    const std::function<ad::Var(ad::Record&)>& analytic,
                    const std::function<double()>& value, std::size_t samples, std::uint64_t seed,
                    double h = 1e-5, double tol = 1e-4, double floor = 1e-6) {
  const auto grad = gradients(sets, analytic);
  std::vector<double*> slots;
  for (auto* s : sets) {
    for (auto& p : *s) {
      for (std::size_t i = 0; i < p.value.size(); ++i) slots.push_back(&p.value[i]);
    }
  }
  std::vector<std::size_t> order(slots.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  order.resize(std::min(samples, order.size()));
  FdResult r;
  for (std::size_t k : order) {
    double& w = *slots[k];
    const double saved = w;
    w = saved + h;
    const double up = value();
    w = saved - h;
    const double down = value();
    w = saved;
    const double numeric = (up - down) / (2 * h);
    const double noise = std::numeric_limits<double>::epsilon() * std::max(std::abs(up), std::abs(down)) / h;
    const double scale = std::max(std::abs(numeric), std::abs(grad[k]));
    const double err = std::abs(numeric - grad[k]);
    r.max_rel = std::max(r.max_rel, err / std::max({scale, floor, noise / tol}));
    r.max_rel_fixed_floor = std::max(r.max_rel_fixed_floor, err / std::max(scale, floor));
    ++r.checked;
  }
  return r;
}

double inference_value(const std::function<ad::Var(ad::Record&)>& loss) {
  ad::Record rec(ad::GradMode::kInference);
  return loss(rec).item();
}

model::BackboneConfig small_backbone() {
  model::BackboneConfig b;
  b.d_model = 16;
  b.n_heads = 2;
  b.n_layers = 1;
  b.max_len = 16;
  b.mlp_mult = 2;
  return b;
}

model::PlannerConfig small_planner() {
  model::PlannerConfig p;
  p.input_dim = 16;
  p.d_model = 8;
  p.n_heads = 2;
  p.mlp_mult = 2;
  p.time_features = 4;
  return p;
}

// Non-zero planner output so every planner weight receives gradient.
const model::InitScheme kDenseInit{.gain = 1.0, .zero_planner_output = false, .zero_modulation = false};

struct TabularInstance {
  model::TabularDenoiser den;
  model::TabularPlanner planner;
};

TabularInstance random_tabular(std::size_t vocab, std::size_t length, std::uint64_t seed) {
  TabularInstance in{model::TabularDenoiser(Vocabulary(vocab), length, model::TabularDenoiser::Context::kFullState),
                     model::TabularPlanner(Vocabulary(vocab), length, true)};
  Rng rng(seed);
  randomize(in.den.parameters(), rng);
  randomize(in.planner.parameters(), rng);
  return in;
}

grpo::GroupBatch sample_batch(model::Denoiser& den, model::UnmaskPlanner* planner, std::span<const Token> prompt,
                              std::size_t completion_len, std::size_t G, const decoding::DecodeConfig& dc,
                              std::uint64_t seed, double clip = grpo::kNoClip) {
  grpo::GroupBatch b;
  b.prompt.assign(prompt.begin(), prompt.end());
  Rng rng(seed);
  for (std::size_t g = 0; g < G; ++g) {
    b.traces.push_back(decoding::rollout(den, planner, prompt, completion_len, dc, rng));
    rewards::RewardBreakdown r;
    r.r_total = rng.normal();
    b.rewards.push_back(r);
  }
  grpo::assign_advantages(b, clip);
  return b;
}

double tail_mean_planner_prob(const std::vector<grpo::GroupMetrics>& m, std::size_t tail) {
  double s = 0.0;
  const std::size_t n = std::min(tail, m.size());
  for (std::size_t i = m.size() - n; i < m.size(); ++i) s += m[i].planner_prob;
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

// ---- criteria -----------------------------------------------------------------

Outcome likelihood_normalization() {
  Outcome o;
  double worst_total = 0.0, worst_trace = 0.0;
  std::size_t instances = 0, trajectories = 0, traces = 0;
  const std::vector<Token> prompt{0};
  std::uint64_t seed = 100;
  for (std::size_t block : {1u, 2u, 3u}) {
    for (int variant = 0; variant < 3; ++variant) {
      auto in = random_tabular(5, 4, ++seed);
      decoding::DecodeConfig dc;
      dc.block_size = block;
      dc.max_steps = 4;
      dc.temperature = 0.7;
      dc.mode = variant == 2 ? decoding::SelectionMode::kHeuristic : decoding::SelectionMode::kPlanner;
      dc.alpha = variant == 1 ? 1.7 : 1.0;
      dc.threshold = 0.5;
      model::UnmaskPlanner* planner = dc.mode == decoding::SelectionMode::kPlanner ? &in.planner : nullptr;
      const auto e = likelihood::enumerate_all_rollouts(in.den, planner, prompt, 3, dc);
      ++instances;
      trajectories += e.trajectories.size();
      worst_total = std::max(worst_total, std::abs(e.total_probability - 1.0));
      Rng rng(seed * 7);
      for (int i = 0; i < 40; ++i) {
        const auto trace = decoding::rollout(in.den, planner, prompt, 3, dc, rng);
        ad::Record rec(ad::GradMode::kInference);
        const double recomputed = std::exp(likelihood::rollout_log_likelihood(rec, in.den, planner, trace, dc).total.item());
        const double listed = e.probability_of(trace);
        worst_trace = std::max({worst_trace, std::abs(std::exp(trace.log_likelihood()) - listed),
                                std::abs(recomputed - listed)});
        ++traces;
      }
    }
  }
  o.require(worst_total <= 1e-9, "normalization");
  o.require(worst_trace <= 1e-9, "trace probabilities");
  o.note(std::to_string(instances) + " instances, " + std::to_string(trajectories) + " trajectories, " +
         std::to_string(traces) + " traces; max |sum-1| " + fmt("%.2e", worst_total) + ", max trace gap " +
         fmt("%.2e", worst_trace));
  return o;
}

Outcome gradient_fidelity() {
  Outcome o;
  Rng init(11);
  model::MaskedDenoiser den(small_backbone(), init, kDenseInit);
  model::PlannerHead planner(small_planner(), init, kDenseInit);
  std::vector<ad::ParameterSet*> both{&den.parameters(), &planner.parameters()};
  rewards::TaskSpec task;
  Rng data(12);
  std::vector<Example> examples;
  for (int i = 0; i < 3; ++i) examples.push_back(task.sample_example(data));
  auto check = [&](const char* name, const FdResult& r) {
    o.require(r.max_rel < 1e-4 && r.checked >= 100, name);
    o.note(std::string(name) + " " + fmt("%.1e", r.max_rel) + " (floor 1e-6: " + fmt("%.1e", r.max_rel_fixed_floor) +
           ") over " + std::to_string(r.checked));
  };

  // simplified_mc_loss: the rng is reseeded per evaluation so t and the mask are fixed.
  auto mc = [&](ad::Record& rec) {
    Rng rng(5);
    ad::Var total = rec.constant(ad::Tensor::scalar(0.0));
    for (const auto& ex : examples) {
      total = total + mdlm::simplified_mc_loss(den, rec, ex.sequence(), mdlm::NoiseSchedule{}, rng).loss;
    }
    return total;
  };
  check("simplified_mc_loss", fd_compare({&den.parameters()}, mc, [&] { return inference_value(mc); }, 120, 1));

  // weighted_bce_loss on planner logits over a partially masked state.
  MaskedSequence state = MaskedSequence::all_masked(examples[0].prompt, 10, rewards::toy::kMask);
  for (std::size_t i = 0; i < 4; ++i) state.tokens[5 + i] = examples[0].completion[i];
  const std::vector<std::size_t> window{9, 10, 11, 12, 13, 14};
  const std::vector<int> labels{1, 0, 1, 1, 0, 0};
  auto bce = [&](ad::Record& rec) {
    const auto out = den.forward(rec, state.tokens);
    ad::Var logits = planner.logits(rec, out, state.tokens, state.masked_fraction(rewards::toy::kMask));
    return planner_init::weighted_bce_loss(rec, ad::take(logits, window), labels).loss;
  };
  check("weighted_bce_loss", fd_compare(both, bce, [&] { return inference_value(bce); }, 120, 2));

  decoding::DecodeConfig dc;
  dc.mode = decoding::SelectionMode::kPlanner;
  dc.block_size = 4;
  dc.temperature = 0.7;
  Rng roll(13);
  const auto trace = decoding::rollout(den, &planner, examples[1].prompt, 10, dc, roll);
  auto ll = [&](ad::Record& rec) { return likelihood::rollout_log_likelihood(rec, den, &planner, trace, dc).total; };
  check("rollout_log_likelihood", fd_compare(both, ll, [&] { return inference_value(ll); }, 120, 3));

  // grpo_loss: the stop-gradient denominators are held at the unperturbed
  // parameters, so the objective differenced is
  //   -(1/(|o| G)) sum_g A^g sum_k p_k(theta) / p_k(theta_0).
  const auto batch = sample_batch(den, &planner, examples[2].prompt, 10, 3, dc, 14);
  std::vector<std::vector<double>> base_logp;
  {
    ad::Record rec(ad::GradMode::kInference);
    for (const auto& t : batch.traces) {
      std::vector<double> per_step;
      for (const auto& s : likelihood::rollout_log_likelihood(rec, den, &planner, t, dc).steps) {
        per_step.push_back(s.total.item());
      }
      base_logp.push_back(per_step);
    }
  }
  auto ratio_value = [&] {
    ad::Record rec(ad::GradMode::kInference);
    double total = 0.0;
    for (std::size_t g = 0; g < batch.size(); ++g) {
      const auto steps = likelihood::rollout_log_likelihood(rec, den, &planner, batch.traces[g], dc).steps;
      double sum = 0.0;
      for (std::size_t k = 0; k < steps.size(); ++k) sum += std::exp(steps[k].total.item() - base_logp[g][k]);
      total += batch.advantages[g] * sum;
    }
    return -total / (10.0 * static_cast<double>(batch.size()));
  };
  auto loss = [&](ad::Record& rec) { return grpo::grpo_loss(rec, batch, den, &planner, dc).loss; };
  check("grpo_loss", fd_compare(both, loss, ratio_value, 120, 4));
  return o;
}

Outcome process_math() {
  Outcome o;
  constexpr Token kMask = 3;
  // Forward masking rate: 10^5 draws of a 4-token completion per setting.
  double worst_sigma = 0.0;
  Rng rng(21);
  for (auto kind : {mdlm::ScheduleKind::kLinear, mdlm::ScheduleKind::kCosine}) {
    const mdlm::NoiseSchedule sched(kind);
    for (double t : {0.1, 0.5, 0.85}) {
      const MaskedSequence x0{{0, 1, 2, 0, 1}, 1};
      const std::size_t trials = 100000;
      std::size_t masked = 0;
      for (std::size_t i = 0; i < trials; ++i) masked += mdlm::forward_noise(x0, t, sched, kMask, rng).masked_count(kMask);
      const double n = 4.0 * trials, p = 1.0 - sched.alpha(t);
      worst_sigma = std::max(worst_sigma, std::abs(masked / n - p) / std::sqrt(p * (1 - p) / n));
    }
  }
  o.require(worst_sigma <= 3.0, "mask rate within 3 sigma");
  o.note("mask rate max deviation " + fmt("%.2f", worst_sigma) + " sigma");

  double worst_norm = 0.0;
  for (auto kind : {mdlm::ScheduleKind::kLinear, mdlm::ScheduleKind::kCosine}) {
    const mdlm::NoiseSchedule sched(kind);
    for (int i = 1; i <= 50; ++i) {
      for (int j = 0; j < i; ++j) {
        const double t = i / 50.0, s = j / 50.0;
        for (Token xt : {kMask, Token{1}}) {
          const auto q = mdlm::reverse_posterior(xt, 1, s, t, sched, kMask);
          worst_norm = std::max(worst_norm, std::abs(q.clean + q.mask - 1.0));
        }
      }
    }
  }
  o.require(worst_norm <= 1e-12, "reverse posterior normalization");
  o.note("posterior max |sum-1| " + fmt("%.1e", worst_norm));

  bool prior_zero = true;
  for (std::uint64_t seed : {31u, 32u}) {
    auto in = random_tabular(4, 3, seed);
    for (std::size_t steps : {1u, 4u, 16u}) {
      Rng r(seed);
      const auto terms =
          mdlm::nelbo_discrete(in.den, MaskedSequence{{0, 2, 1}, 0}, steps, mdlm::EstimateMode::kExhaustive, mdlm::NoiseSchedule{}, r);
      prior_zero = prior_zero && terms.prior == 0.0;
    }
  }
  o.require(prior_zero, "NELBO prior term exactly 0");

  // Simplified loss (Monte Carlo over t and masks) against the exhaustive
  // any-order autoregressive NLL on full-state tabular models with L = 3.
  double worst_se = 0.0;
  for (std::uint64_t seed : {41u, 42u}) {
    auto in = random_tabular(4, 3, seed);
    const MaskedSequence x0{{2, 0, 1}, 0};
    Rng r(seed);
    const double exact = mdlm::aoarm_expected_nll(in.den, x0, mdlm::EstimateMode::kExhaustive, r);
    const std::size_t n = 200000;
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ad::Record rec(ad::GradMode::kInference);
      const double v = mdlm::simplified_mc_loss(in.den, rec, x0, mdlm::NoiseSchedule{}, r).loss.item();
      sum += v;
      sq += v * v;
    }
    const double mean = sum / n, se = std::sqrt((sq / n - mean * mean) / (n - 1));
    worst_se = std::max(worst_se, std::abs(mean - exact) / se);
    o.note("AO-ARM " + fmt("%.4f", exact) + " vs MC " + fmt("%.4f", mean) + fmt(" (SE %.4f)", se));
  }
  o.require(worst_se <= 2.0, "simplified loss within 2 SE of AO-ARM NLL");
  return o;
}

Outcome ratio_identity() {
  Outcome o;
  auto in = random_tabular(4, 4, 51);
  decoding::DecodeConfig dc;
  dc.mode = decoding::SelectionMode::kPlanner;
  dc.block_size = 3;
  dc.temperature = 0.8;
  const std::vector<Token> prompt{1};
  const auto batch = sample_batch(in.den, &in.planner, prompt, 3, 5, dc, 52);
  std::vector<ad::ParameterSet*> sets{&in.den.parameters(), &in.planner.parameters()};
  const auto a = gradients(sets, [&](ad::Record& r) { return grpo::grpo_loss(r, batch, in.den, &in.planner, dc).loss; });
  const auto b = gradients(sets, [&](ad::Record& r) {
    return grpo::reinforce_log_loss(r, batch, in.den, &in.planner, dc).loss;
  });
  double worst = 0.0;
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (b[i] != 0.0) ++nonzero;
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), 1e-12}));
  }
  o.require(worst < 1e-4 && nonzero > 0, "ratio and log gradients agree");
  o.note("max rel diff " + fmt("%.1e", worst) + " over " + std::to_string(nonzero) + " nonzero entries");

  ad::Record rec;
  const double value = grpo::grpo_loss(rec, batch, in.den, &in.planner, dc).loss.item();
  const double scale = -1.0 / (3.0 * static_cast<double>(batch.size()));
  double expected = 0.0;
  for (std::size_t g = 0; g < batch.size(); ++g) {
    expected += static_cast<double>(batch.traces[g].nfe()) * (scale * batch.advantages[g]);
  }
  o.require(value == expected, "loss value equals -(1/(|o|G)) sum A K");
  o.note("loss " + fmt("%.17g", value) + fmt(" vs %.17g", expected));
  return o;
}

Outcome advantage_mechanics() {
  Outcome o;
  Rng rng(61);
  double worst_sum = 0.0;
  bool nonneg = true;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> r(12);
    for (double& x : r) x = 3.0 * rng.normal() + (trial % 7);
    const auto a = grpo::compute_advantages(r);
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(a.begin(), a.end(), 0.0)));
    for (double x : grpo::clip_advantages(a, 0.0)) nonneg = nonneg && x >= 0.0;
  }
  o.require(worst_sum <= 1e-9, "advantages sum to 0");
  o.require(nonneg, "C=0 advantages nonnegative");

  Rng init(62);
  model::MaskedDenoiser den(small_backbone(), init, kDenseInit);
  model::PlannerHead planner(small_planner(), init, kDenseInit);
  const std::string den_before = ad::parameter_digest(den.parameters());
  const std::string planner_before = ad::parameter_digest(planner.parameters());
  grpo::GrpoConfig gc;
  gc.group_size = 4;
  gc.model_optimizer.weight_decay = 0.01;
  gc.planner_optimizer.weight_decay = 0.01;
  gc.decode.block_size = 4;
  gc.decode.temperature = 1.0;
  grpo::GrpoTrainer trainer(den, planner,
                            [](std::span<const Token>, const decoding::RolloutTrace& t) {
                              rewards::RewardBreakdown b;
                              b.nfe = t.nfe();
                              b.r_total = 0.37;
                              return b;
                            },
                            gc);
  rewards::TaskSpec task;
  Rng prompts(63);
  bool any_update = false;
  for (int g = 0; g < 3; ++g) any_update = trainer.train_group(task.sample_prompt(prompts)).updated || any_update;
  const bool unchanged = ad::parameter_digest(den.parameters()) == den_before &&
                         ad::parameter_digest(planner.parameters()) == planner_before;
  o.require(unchanged && !any_update, "uniform rewards leave parameters bitwise unchanged");
  o.note("max |sum A| " + fmt("%.1e", worst_sum) + "; uniform-reward update is a no-op: " +
         (unchanged ? "yes" : "no"));
  return o;
}

// Shared toy pipeline.
struct Pipeline {
  cli::ExperimentConfig config;
  fs::path run;
  cli::PlannerInitReport init;
  std::vector<cli::EvalRow> eval_init;
  cli::GrpoReport grpo;
  std::vector<cli::EvalRow> eval_grpo;
};

Pipeline build_pipeline() {
  Pipeline p;
  p.config = cli::load_config(fs::path(DULTRA_SOURCE_DIR) / "configs" / "default.yaml");
  p.run = fs::temp_directory_path() / "dultra_acceptance";
  fs::remove_all(p.run);
  p.config.out = p.run;
  cli::cmd_pretrain(p.config);
  p.init = cli::cmd_init_planner(p.config, p.run);

  cli::ExperimentConfig e = p.config;
  e.decode.mode = decoding::SelectionMode::kPlanner;
  e.evaluate.alphas = {1.0};
  e.out = p.run / "eval_init";
  p.eval_init = cli::cmd_evaluate(e, p.run);

  p.grpo = cli::cmd_train_grpo(p.config, p.run, false);
  e.evaluate.alphas = p.config.evaluate.alphas;
  e.out = p.run / "eval_grpo";
  p.eval_grpo = cli::cmd_evaluate(e, p.run);
  return p;
}

Outcome collapse_ablation(const Pipeline& p) {
  Outcome o;
  const std::size_t budget = 200, tail = 10;
  auto arm = [&](double clip, cli::RewardKind reward, const char* name) {
    cli::ExperimentConfig c = p.config;
    c.grpo.clip = clip;
    c.grpo.reward = reward;
    c.grpo.total_groups = budget;
    c.out = p.run / name;
    return tail_mean_planner_prob(cli::cmd_train_grpo(c, p.run, false).metrics, tail);
  };
  const double unclipped = arm(grpo::kNoClip, cli::RewardKind::kUnmaskCountPenalty, "collapse_noclip");
  const double clipped = arm(0.0, cli::RewardKind::kStandard, "collapse_clip0");
  const double clipped_adversarial = arm(0.0, cli::RewardKind::kUnmaskCountPenalty, "collapse_clip0_adversarial");
  o.require(unclipped < 0.05, "C=-inf adversarial planner probability < 0.05");
  o.require(clipped > 0.2, "C=0 standard-reward planner probability > 0.2");
  o.note("mean planner prob over groups " + std::to_string(budget - tail) + "-" + std::to_string(budget - 1) +
         ": C=-inf adversarial " + fmt("%.4f", unclipped) + ", C=0 standard " + fmt("%.4f", clipped) +
         "; C=0 under the adversarial reward " + fmt("%.4f", clipped_adversarial) +
         " (that reward pays for collapse directly)");
  return o;
}

Outcome planner_init_check(const Pipeline& p) {
  Outcome o;
  o.require(p.init.heldout_agreement >= 0.95, "held-out agreement >= 95%");
  o.require(p.init.backbone_digest_before == p.init.backbone_digest_after, "backbone unchanged");
  o.require(p.init.no_forced_rate >= 0.95, "no forced step on >= 95% of prompts");
  o.note("agreement " + fmt("%.4f", p.init.heldout_agreement) + ", no-forced rate " +
         fmt("%.3f", p.init.no_forced_rate) + ", backbone digest " + p.init.backbone_digest_after);
  return o;
}

Outcome efficiency_gain(const Pipeline& p) {
  Outcome o;
  const auto& before = p.eval_init.front();
  auto after = p.eval_grpo.front();
  for (const auto& r : p.eval_grpo) {
    if (r.alpha == 1.0) after = r;
  }
  const double reduction = 1.0 - after.nfe / before.nfe;
  o.require(reduction >= 0.25, "NFE reduced by >= 25%");
  o.require(std::abs(after.accuracy - before.accuracy) <= 0.05, "accuracy within 5 points");
  o.note("planner-init NFE " + fmt("%.3f", before.nfe) + fmt(" acc %.3f", before.accuracy) + " -> GRPO NFE " +
         fmt("%.3f", after.nfe) + fmt(" acc %.3f", after.accuracy) + fmt(" (%.1f%% fewer NFE", 100 * reduction) +
         ", " + std::to_string(p.grpo.groups_done) + " groups)");
  return o;
}

Outcome alpha_sweep(const Pipeline& p) {
  Outcome o;
  // Exact property of the selection rule: sum_i min(alpha p_i, 1) is nondecreasing in alpha.
  Rng rng(91);
  std::vector<double> alphas;
  for (int i = 1; i <= 200; ++i) alphas.push_back(0.05 * i);
  bool monotone = true;
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng.index(8);
    std::vector<double> probs(n);
    std::vector<std::size_t> cands(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double u = rng.uniform();
      probs[i] = trial % 5 == 0 && i == 0 ? (u < 0.5 ? 0.0 : 1.0) : u;
      cands[i] = i;
    }
    double prev = -1.0;
    for (double a : alphas) {
      Rng draw(1);
      const auto sel = decoding::planner_select(cands, probs, a, draw);
      double expected = 0.0;
      for (double e : sel.effective) expected += e;
      monotone = monotone && expected >= prev;
      prev = expected;
    }
  }
  o.require(monotone, "expected selected count nondecreasing in alpha");

  bool nonincreasing = true;
  std::string table;
  for (std::size_t i = 0; i < p.eval_grpo.size(); ++i) {
    if (i > 0) nonincreasing = nonincreasing && p.eval_grpo[i].nfe <= p.eval_grpo[i - 1].nfe;
    table += fmt(" a=%g", p.eval_grpo[i].alpha) + fmt(":%.3f", p.eval_grpo[i].nfe);
  }
  o.require(p.eval_grpo.size() == 4 && nonincreasing, "measured NFE nonincreasing in alpha");
  o.note("mean NFE over " + std::to_string(p.eval_grpo.front().trials) + " trials:" + table);
  return o;
}

Outcome mode_filtering(const Pipeline& p) {
  Outcome o;
  const auto r = cli::run_bimodal_demo(p.config.bimodal, p.config.seed);
  o.require(std::abs(r.one_step_cross_mass - 0.5) <= 1e-12, "one-step cross-mode mass 0.5");
  o.require(r.sequential_cross_mass == 0.0, "sequential cross-mode mass 0");
  o.require(r.post_grpo_cross_mass < 0.02, "post-GRPO cross-mode mass < 0.02");
  o.note("cross-mode mass one-step " + fmt("%.4f", r.one_step_cross_mass) + ", sequential " +
         fmt("%.4f", r.sequential_cross_mass) + ", before GRPO " + fmt("%.4f", r.initial_cross_mass) +
         ", after GRPO " + fmt("%.4f", r.post_grpo_cross_mass));
  return o;
}

Outcome heatmap_export(const Pipeline& p) {
  Outcome o;
  std::vector<fs::path> traces;
  for (const auto& entry : fs::directory_iterator(p.run / "eval_grpo" / "traces")) traces.push_back(entry.path());
  std::sort(traces.begin(), traces.end());
  const auto csvs = cli::cmd_export_heatmap(traces, p.run / "heatmaps");
  bool once = true;
  for (const auto& path : traces) {
    const auto trace = decoding::load_trace(path);
    const auto m = cli::unmask_matrix(trace);
    for (std::size_t i = 0; i < m.size(); ++i) once = once && std::accumulate(m[i].begin(), m[i].end(), 0) == 1;
    for (std::size_t k = 0; k < trace.nfe(); ++k) {
      int col = 0;
      for (const auto& row : m) col += row[k];
      once = once && col == static_cast<int>(trace.steps[k].selected.size());
    }
  }
  o.require(!traces.empty() && csvs.size() == traces.size() && once, "each position unmasked exactly once");

  // Greedy decoding with block size 1 unmasks left to right.
  cli::ExperimentConfig c = p.config;
  Rng init(0);
  model::MaskedDenoiser den(c.backbone, init);
  ad::load_parameters(p.run / "mdlm", den.parameters());
  decoding::DecodeConfig dc;
  dc.block_size = 1;
  dc.temperature = 0.0;
  rewards::TaskSpec task;
  Rng prompts(101);
  bool staircase = true;
  for (int i = 0; i < 10; ++i) {
    Rng rng(i);
    const auto m = cli::unmask_matrix(decoding::rollout(den, nullptr, task.sample_prompt(prompts), 10, dc, rng));
    for (std::size_t r = 0; r < m.size(); ++r) {
      for (std::size_t k = 0; k < m[r].size(); ++k) staircase = staircase && m[r][k] == (r == k ? 1 : 0);
    }
  }
  o.require(staircase, "B=1 greedy traces form a staircase");
  o.note(std::to_string(traces.size()) + " saved traces exported; 10 greedy B=1 traces checked");
  return o;
}

}  // namespace

int main() {
  std::printf("acceptance: 11 criteria\n");
  run(1, "likelihood normalization", likelihood_normalization);
  run(2, "gradient fidelity", gradient_fidelity);
  run(3, "process math", process_math);
  run(4, "ratio/log identity", ratio_identity);
  run(5, "advantage mechanics", advantage_mechanics);

  const auto t0 = std::chrono::steady_clock::now();
  Pipeline pipeline;
  std::string pipeline_error;
  try {
    pipeline = build_pipeline();
  } catch (const std::exception& e) {
    pipeline_error = e.what();
  }
  std::printf("toy pipeline (pretrain, planner init, GRPO, evaluation): %.1fs%s%s\n",
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
              pipeline_error.empty() ? "" : ", error: ", pipeline_error.c_str());
  auto with_pipeline = [&](Outcome (*f)(const Pipeline&)) {
    return [&pipeline, &pipeline_error, f] {
      if (!pipeline_error.empty()) throw std::runtime_error("pipeline failed: " + pipeline_error);
      return f(pipeline);
    };
  };
  run(6, "collapse ablation", with_pipeline(collapse_ablation));
  run(7, "planner init", with_pipeline(planner_init_check));
  run(8, "end-to-end efficiency", with_pipeline(efficiency_gain));
  run(9, "alpha sweep", with_pipeline(alpha_sweep));
  run(10, "mode filtering", with_pipeline(mode_filtering));
  run(11, "heatmap export", with_pipeline(heatmap_export));
  std::printf("acceptance: %d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
