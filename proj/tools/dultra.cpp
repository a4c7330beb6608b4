// Command-line driver for the toy training pipeline.
//
//   dultra pretrain       --config C [--seed S] [--out DIR]
//   dultra init-planner   --config C [--checkpoint DIR]
//   dultra train-grpo     --config C [--checkpoint DIR] [--resume] [--max-groups N]
//   dultra evaluate       --config C [--checkpoint DIR] [--alpha A...] [--trials N] [--mode M]
//   dultra export-heatmap TRACE... --out DIR
//   dultra demo-bimodal   [--config C] [--seed S] [--out DIR]
//
// Exit codes: 0 ok, 1 runtime or numerical failure, 2 usage or configuration error.

#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "dultra/autodiff/tensor.hpp"
#include "dultra/cli/commands.hpp"

namespace {

using namespace dultra;
using namespace dultra::cli;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::vector<double> alphas;
  std::optional<std::size_t> trials;
  std::string mode;
  bool resume = false;
  std::optional<std::size_t> max_groups;
  std::vector<std::string> traces;
};

void add_common(CLI::App* cmd, Options& o, bool config_required) {
  auto* c = cmd->add_option("--config", o.config, "YAML experiment configuration");
  if (config_required) c->required();
  cmd->add_option("--seed", o.seed, "override the configured seed");
  cmd->add_option("--out", o.out, "override the output directory");
}

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.out = o.out;
  if (!o.alphas.empty()) c.evaluate.alphas = o.alphas;
  if (o.trials) c.evaluate.trials = *o.trials;
  if (!o.mode.empty()) {
    try {
      c.decode.mode = decoding::parse_mode(o.mode);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  c.validate();
  return c;
}

std::filesystem::path checkpoint_dir(const Options& o, const ExperimentConfig& c) {
  return o.checkpoint.empty() ? c.out : std::filesystem::path(o.checkpoint);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked diffusion decoding with a learned unmasking planner"};
  app.require_subcommand(1);
  Options o;

  auto* pretrain = app.add_subcommand("pretrain", "train the denoiser and the teacher");
  add_common(pretrain, o, true);

  auto* init = app.add_subcommand("init-planner", "fit the planner to the confidence heuristic");
  add_common(init, o, true);
  init->add_option("--checkpoint", o.checkpoint, "run directory holding mdlm (default: --out)");

  auto* train = app.add_subcommand("train-grpo", "joint GRPO training of denoiser and planner");
  add_common(train, o, true);
  train->add_option("--checkpoint", o.checkpoint, "run directory holding mdlm, teacher, planner");
  train->add_flag("--resume", o.resume, "continue from <out>/grpo");
  train->add_option("--max-groups", o.max_groups, "stop after this many groups in this invocation");

  auto* eval = app.add_subcommand("evaluate", "accuracy and NFE over an alpha sweep");
  add_common(eval, o, true);
  eval->add_option("--checkpoint", o.checkpoint, "run directory (default: --out)");
  eval->add_option("--alpha", o.alphas, "planner probability multipliers");
  eval->add_option("--trials", o.trials, "trials per alpha in planner mode");
  eval->add_option("--mode", o.mode, "heuristic or planner")->check(CLI::IsMember({"heuristic", "planner"}));

  auto* heat = app.add_subcommand("export-heatmap", "positions x steps unmask matrices from traces");
  heat->add_option("traces", o.traces, "trace JSON files")->required()->check(CLI::ExistingFile);
  heat->add_option("--out", o.out, "output directory")->required();

  auto* demo = app.add_subcommand("demo-bimodal", "mode filtering on a two-token bimodal target");
  add_common(demo, o, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (heat->parsed()) {
      std::vector<std::filesystem::path> paths(o.traces.begin(), o.traces.end());
      for (const auto& p : cmd_export_heatmap(paths, o.out)) std::printf("wrote %s\n", p.c_str());
      return 0;
    }
    const ExperimentConfig config = resolve(o);
    if (pretrain->parsed()) {
      const auto r = cmd_pretrain(config);
      std::printf("pretrain: %zu loss rows, final loss %.4f, teacher perplexity %.3f\n", r.loss_rows,
                  r.final_loss, r.final_perplexity);
    } else if (init->parsed()) {
      const auto r = cmd_init_planner(config, checkpoint_dir(o, config));
      std::printf("init-planner: held-out agreement %.4f, no-forced rate %.3f, backbone %s\n",
                  r.heldout_agreement, r.no_forced_rate,
                  r.backbone_digest_before == r.backbone_digest_after ? "unchanged" : "CHANGED");
    } else if (train->parsed()) {
      const auto r = cmd_train_grpo(config, checkpoint_dir(o, config), o.resume, o.max_groups);
      std::printf("train-grpo: ran %zu groups, %zu of %zu done\n", r.groups_run, r.groups_done,
                  config.grpo.total_groups);
    } else if (eval->parsed()) {
      for (const auto& row : cmd_evaluate(config, checkpoint_dir(o, config))) {
        std::printf("%s alpha=%g trials=%zu accuracy=%.4f nfe=%.3f\n", row.mode.c_str(), row.alpha, row.trials,
                    row.accuracy, row.nfe);
      }
    } else if (demo->parsed()) {
      const auto r = cmd_demo_bimodal(config);
      std::printf("cross-mode mass: one-step %.4f, sequential %.4f, post-GRPO %.4f (mean NFE %.3f)\n",
                  r.one_step_cross_mass, r.sequential_cross_mass, r.post_grpo_cross_mass, r.post_grpo_mean_nfe);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
