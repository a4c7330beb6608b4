#include "dultra/cli/commands.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "dultra/autodiff/checkpoint.hpp"
#include "dultra/decoding/trace_io.hpp"
#include "dultra/likelihood/enumerate.hpp"
#include "dultra/mdlm/corpus.hpp"
#include "dultra/mdlm/pretrain.hpp"
#include "dultra/model/tabular.hpp"
#include "dultra/model/transformer.hpp"
#include "dultra/planner_init/planner_init.hpp"
#include "json.hpp"

namespace dultra::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Independent random streams, one per stage, all derived from config.seed.
enum Stream : std::uint64_t {
  kCorpus = 1,
  kModelInit,
  kPretrain,
  kTeacherInit,
  kTeacherTrain,
  kEvalPrompts,
  kInitPrompts,
  kLabels,
  kPlannerInit,
  kPlannerTrain,
  kInitCheck,
  kGrpoPrompts,
  kGrpoRollouts,
  kEvalRollouts,
  kBimodal,
};

Rng stream(const ExperimentConfig& c, Stream s) { return Rng(derive_seed(c.seed, {s})); }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

rewards::TaskSpec task_of(const ExperimentConfig& c) {
  rewards::TaskSpec t;
  t.kind = c.task.kind;
  t.style = c.task.style;
  return t;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const json& j) { open_out(path) << j.dump(2) << "\n"; }

bool has_checkpoint(const fs::path& stem) {
  return fs::exists(fs::path(stem).concat(".json")) && fs::exists(fs::path(stem).concat(".bin"));
}

void require_checkpoint(const fs::path& stem, const std::string& what) {
  if (!has_checkpoint(stem)) {
    throw std::runtime_error("missing " + what + " checkpoint: " + stem.string() + ".{bin,json}");
  }
}

// Parameters are overwritten on load, so the init stream only fixes shapes.
model::MaskedDenoiser load_denoiser(const ExperimentConfig& c, const fs::path& stem) {
  require_checkpoint(stem, "denoiser");
  Rng rng = stream(c, kModelInit);
  model::MaskedDenoiser den(c.backbone, rng);
  ad::load_parameters(stem, den.parameters());
  return den;
}

model::PlannerHead make_planner(const ExperimentConfig& c) {
  Rng rng = stream(c, kPlannerInit);
  return model::PlannerHead(c.planner, rng);
}

model::CausalTeacher make_teacher(const ExperimentConfig& c) {
  Rng rng = stream(c, kTeacherInit);
  return model::CausalTeacher(c.teacher.backbone, rng);
}

std::vector<std::vector<Token>> eval_prompts(const ExperimentConfig& c) {
  Rng rng = stream(c, kEvalPrompts);
  return rewards::generate_prompts(task_of(c), c.task.eval_prompts, rng);
}

const char* kMetricsHeader =
    "group,r_task,r_format,r_step,r_distill,r_total,nfe,accuracy,planner_prob,loss,updated,clamped";

std::string metrics_row(const grpo::GroupMetrics& m) {
  std::ostringstream os;
  os << m.group << ',' << num(m.r_task) << ',' << num(m.r_format) << ',' << num(m.r_step) << ','
     << num(m.r_distill) << ',' << num(m.r_total) << ',' << num(m.nfe) << ',' << num(m.accuracy) << ','
     << num(m.planner_prob) << ',' << num(m.loss) << ',' << (m.updated ? 1 : 0) << ','
     << (m.clamped ? 1 : 0);
  return os.str();
}

// Header plus the first `rows` data rows of an existing metrics file.
std::vector<std::string> kept_metrics(const fs::path& path, std::size_t rows) {
  std::vector<std::string> lines{kMetricsHeader};
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  while (lines.size() <= rows && std::getline(in, line)) lines.push_back(line);
  if (lines.size() <= rows) {
    throw std::runtime_error("resume: " + path.string() + " has fewer rows than completed groups");
  }
  return lines;
}

}  // namespace

void echo_config(const ExperimentConfig& config) {
  open_out(config.out / "config.yaml") << dump_config(config);
}

PretrainReport cmd_pretrain(const ExperimentConfig& config) {
  config.validate();
  echo_config(config);
  const fs::path& out = config.out;
  const auto task = task_of(config);
  Rng corpus_rng = stream(config, kCorpus);
  const auto corpus = rewards::generate_corpus(task, config.task.corpus_size, corpus_rng);
  write_corpus(out / "corpus.txt", corpus);

  PretrainReport report;
  {
    Rng init = stream(config, kModelInit);
    model::MaskedDenoiser den(config.backbone, init);
    mdlm::PretrainConfig pc;
    pc.steps = config.pretrain.steps;
    pc.batch_size = config.pretrain.batch_size;
    pc.log_every = config.pretrain.log_every;
    pc.schedule = mdlm::NoiseSchedule(config.pretrain.schedule);
    pc.warmup_steps = config.pretrain.warmup_steps;
    pc.cosine_decay = config.pretrain.cosine_decay;
    ad::OptimizerState opt(den.parameters(),
                           ad::AdamWConfig{.lr = config.pretrain.lr, .clip_norm = config.pretrain.clip_norm});
    Rng rng = stream(config, kPretrain);
    const auto metrics = mdlm::pretrain_mdlm(den, corpus, pc, opt, rng);
    auto csv = open_out(out / "pretrain_loss.csv");
    csv << "step,loss\n";
    for (const auto& p : metrics.curve) csv << p.step << ',' << num(p.loss) << '\n';
    report.loss_rows = metrics.curve.size();
    if (!metrics.curve.empty()) report.final_loss = metrics.curve.back().loss;
    ad::save_parameters(out / "mdlm", den.parameters(), json{{"kind", "mdlm"}});
  }
  {
    model::CausalTeacher teacher = make_teacher(config);
    rewards::TeacherTrainConfig tc{config.teacher.steps, config.teacher.batch_size, config.teacher.log_every};
    ad::OptimizerState opt(teacher.parameters(), ad::AdamWConfig{.lr = config.teacher.lr});
    Rng rng = stream(config, kTeacherTrain);
    const auto metrics = rewards::pretrain_teacher(teacher, corpus, tc, opt, rng);
    auto csv = open_out(out / "teacher_ppl.csv");
    csv << "step,perplexity\n";
    for (const auto& p : metrics.curve) csv << p.step << ',' << num(p.perplexity) << '\n';
    if (!metrics.curve.empty()) report.final_perplexity = metrics.curve.back().perplexity;
    ad::save_parameters(out / "teacher", teacher.parameters(), json{{"kind", "teacher"}});
  }
  return report;
}

PlannerInitReport cmd_init_planner(const ExperimentConfig& config, const fs::path& checkpoint) {
  config.validate();
  model::MaskedDenoiser den = load_denoiser(config, checkpoint / "mdlm");
  echo_config(config);
  const auto task = task_of(config);
  const std::size_t len = task.completion_len();

  Rng prompt_rng = stream(config, kInitPrompts);
  const auto train_prompts = rewards::generate_prompts(task, config.planner_init.train_prompts, prompt_rng);
  const auto held_prompts = rewards::generate_prompts(task, config.planner_init.heldout_prompts, prompt_rng);
  decoding::DecodeConfig heuristic = config.decode;
  heuristic.mode = decoding::SelectionMode::kHeuristic;
  Rng label_rng = stream(config, kLabels);
  const auto train = planner_init::generate_labels(den, train_prompts, len, heuristic, label_rng);
  const auto held = planner_init::generate_labels(den, held_prompts, len, heuristic, label_rng);
  planner_init::write_labels(config.out / "labels.jsonl", train);

  PlannerInitReport report;
  report.train_examples = train.size();
  report.heldout_examples = held.size();
  report.positive_rate = planner_init::positive_rate(train);
  report.backbone_digest_before = ad::parameter_digest(den.parameters());

  model::PlannerHead planner = make_planner(config);
  planner_init::PlannerInitConfig ic{config.planner_init.epochs, config.planner_init.batch_size,
                                     config.planner_init.w_pos_cap};
  ad::OptimizerState opt(planner.parameters(), ad::AdamWConfig{.lr = config.planner_init.lr, .weight_decay = 0.0});
  Rng train_rng = stream(config, kPlannerTrain);
  const auto metrics = planner_init::train_planner_init(planner, den, train, ic, opt, train_rng);
  report.capped_batches = metrics.capped_batches;
  report.backbone_digest_after = ad::parameter_digest(den.parameters());

  const auto agreement = planner_init::evaluate_agreement(planner, den, held);
  report.heldout_agreement = agreement.label_accuracy;
  report.mean_unmask_prob = agreement.mean_unmask_prob;

  decoding::DecodeConfig planner_decode = config.decode;
  planner_decode.mode = decoding::SelectionMode::kPlanner;
  const auto prompts = eval_prompts(config);
  std::size_t clean = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    Rng rng(derive_seed(config.seed, {kInitCheck, i}));
    clean += !decoding::rollout(den, &planner, prompts[i], len, planner_decode, rng).hit_cap();
  }
  report.no_forced_rate = static_cast<double>(clean) / static_cast<double>(prompts.size());

  ad::save_parameters(config.out / "planner", planner.parameters(), json{{"kind", "planner"}});
  json epochs = json::array();
  for (double l : metrics.epoch_loss) epochs.push_back(l);
  write_json(config.out / "planner_init.json",
             json{{"train_examples", report.train_examples},
                  {"heldout_examples", report.heldout_examples},
                  {"positive_rate", report.positive_rate},
                  {"heldout_agreement", report.heldout_agreement},
                  {"mean_unmask_prob", report.mean_unmask_prob},
                  {"no_forced_rate", report.no_forced_rate},
                  {"capped_batches", report.capped_batches},
                  {"epoch_loss", epochs},
                  {"backbone_digest_before", report.backbone_digest_before},
                  {"backbone_digest_after", report.backbone_digest_after}});
  return report;
}

GrpoReport cmd_train_grpo(const ExperimentConfig& config, const fs::path& checkpoint, bool resume,
                          std::optional<std::size_t> max_groups) {
  config.validate();
  const fs::path dir = config.out / "grpo";
  const auto task = task_of(config);

  const fs::path model_stem = resume ? dir / "model" : checkpoint / "mdlm";
  const fs::path planner_stem = resume ? dir / "planner" : checkpoint / "planner";
  model::MaskedDenoiser den = load_denoiser(config, model_stem);
  model::PlannerHead planner = make_planner(config);
  require_checkpoint(planner_stem, "planner");
  ad::load_parameters(planner_stem, planner.parameters());

  std::optional<model::CausalTeacher> teacher;
  if (config.grpo.reward == RewardKind::kStandard && config.weights.distill != 0.0) {
    teacher.emplace(make_teacher(config));
    require_checkpoint(checkpoint / "teacher", "teacher");
    ad::load_parameters(checkpoint / "teacher", teacher->parameters());
  }
  grpo::RewardFn reward = config.grpo.reward == RewardKind::kStandard
                              ? grpo::standard_reward(task, teacher ? &*teacher : nullptr, config.weights)
                              : grpo::unmask_count_penalty();

  grpo::GrpoConfig gc;
  gc.group_size = config.grpo.group_size;
  gc.clip = config.grpo.clip;
  gc.total_groups = config.grpo.total_groups;
  gc.completion_len = task.completion_len();
  gc.decode = config.decode;
  gc.decode.mode = decoding::SelectionMode::kPlanner;
  gc.model_optimizer = ad::AdamWConfig{.lr = config.grpo.model_lr, .weight_decay = 0.0};
  gc.planner_optimizer = ad::AdamWConfig{.lr = config.grpo.planner_lr, .weight_decay = 0.0};
  gc.train_model = config.grpo.train_model;
  gc.seed = derive_seed(config.seed, {kGrpoRollouts});
  grpo::GrpoTrainer trainer(den, planner, reward, gc);

  std::vector<std::string> lines{kMetricsHeader};
  if (resume) {
    std::ifstream in(dir / "state.json");
    if (!in) throw std::runtime_error("resume: missing " + (dir / "state.json").string());
    const json state = json::parse(in);
    trainer.set_groups_done(state.at("groups_done").get<std::size_t>());
    ad::load_optimizer(dir / "model_opt", den.parameters(), trainer.model_optimizer());
    ad::load_optimizer(dir / "planner_opt", planner.parameters(), trainer.planner_optimizer());
    lines = kept_metrics(config.out / "grpo_metrics.csv", trainer.groups_done());
  }
  echo_config(config);

  auto save = [&] {
    fs::create_directories(dir);
    ad::save_parameters(dir / "model", den.parameters(), json{{"kind", "mdlm"}});
    ad::save_parameters(dir / "planner", planner.parameters(), json{{"kind", "planner"}});
    ad::save_optimizer(dir / "model_opt", den.parameters(), trainer.model_optimizer());
    ad::save_optimizer(dir / "planner_opt", planner.parameters(), trainer.planner_optimizer());
    write_json(dir / "state.json", json{{"groups_done", trainer.groups_done()}});
    auto csv = open_out(config.out / "grpo_metrics.csv");
    for (const auto& l : lines) csv << l << '\n';
  };

  GrpoReport report;
  const std::size_t budget = max_groups.value_or(gc.total_groups);
  while (trainer.groups_done() < gc.total_groups && report.groups_run < budget) {
    const std::size_t n = trainer.groups_done();
    Rng prompt_rng(derive_seed(config.seed, {kGrpoPrompts, n}));
    const auto prompt = task.sample_prompt(prompt_rng);
    const auto m = trainer.train_group(prompt);
    lines.push_back(metrics_row(m));
    report.metrics.push_back(m);
    ++report.groups_run;
    if (config.grpo.checkpoint_every > 0 && trainer.groups_done() % config.grpo.checkpoint_every == 0) save();
  }
  save();
  report.groups_done = trainer.groups_done();
  return report;
}

std::vector<EvalRow> cmd_evaluate(const ExperimentConfig& config, const fs::path& checkpoint) {
  config.validate();
  const auto task = task_of(config);
  const bool planner_mode = config.decode.mode == decoding::SelectionMode::kPlanner;
  const bool tuned = has_checkpoint(checkpoint / "grpo" / "model");
  model::MaskedDenoiser den = load_denoiser(config, tuned ? checkpoint / "grpo" / "model" : checkpoint / "mdlm");
  std::optional<model::PlannerHead> planner;
  if (planner_mode) {
    planner.emplace(make_planner(config));
    const fs::path stem = tuned ? checkpoint / "grpo" / "planner" : checkpoint / "planner";
    require_checkpoint(stem, "planner");
    ad::load_parameters(stem, planner->parameters());
  }
  echo_config(config);
  const auto prompts = eval_prompts(config);
  const std::size_t trials = planner_mode ? config.evaluate.trials : 1;
  const std::string mode = decoding::mode_name(config.decode.mode);

  std::vector<EvalRow> rows;
  std::optional<EvalRow> heuristic_row;
  for (double alpha : config.evaluate.alphas) {
    if (heuristic_row) {
      EvalRow row = *heuristic_row;
      row.alpha = alpha;
      rows.push_back(row);
      continue;
    }
    decoding::DecodeConfig dc = config.decode;
    dc.alpha = alpha;
    EvalRow row{mode, alpha, trials};
    for (std::size_t trial = 0; trial < trials; ++trial) {
      for (std::size_t i = 0; i < prompts.size(); ++i) {
        // Common random numbers across alphas.
        Rng rng(derive_seed(config.seed, {kEvalRollouts, trial, i}));
        const auto trace =
            decoding::rollout(den, planner ? &*planner : nullptr, prompts[i], task.completion_len(), dc, rng);
        row.accuracy += task.verify(prompts[i], trace.completion());
        row.nfe += static_cast<double>(trace.nfe());
        row.forced_rate += trace.hit_cap();
        if (trial == 0 && i < config.evaluate.saved_traces) {
          decoding::save_trace(config.out / "traces" / (mode + "_alpha" + num(alpha) + "_p" + std::to_string(i) + ".json"),
                               trace);
        }
      }
    }
    const double n = static_cast<double>(trials * prompts.size());
    row.accuracy /= n;
    row.nfe /= n;
    row.forced_rate /= n;
    rows.push_back(row);
    if (!planner_mode) heuristic_row = row;
  }
  auto csv = open_out(config.out / "eval.csv");
  csv << "mode,alpha,trials,accuracy,nfe,forced_rate\n";
  for (const auto& r : rows) {
    csv << r.mode << ',' << num(r.alpha) << ',' << r.trials << ',' << num(r.accuracy) << ',' << num(r.nfe) << ','
        << num(r.forced_rate) << '\n';
  }
  return rows;
}

std::vector<std::vector<int>> unmask_matrix(const decoding::RolloutTrace& trace) {
  // Replaying validates the trace: every record must apply to its state.
  (void)decoding::replay(trace, rewards::toy::kMask);
  const std::size_t start = trace.prompt.size();
  std::vector<std::vector<int>> matrix(trace.completion_len, std::vector<int>(trace.nfe(), 0));
  for (std::size_t k = 0; k < trace.nfe(); ++k) {
    for (std::size_t pos : trace.steps[k].selected) matrix[pos - start][k] = 1;
  }
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    int total = 0;
    for (int v : matrix[i]) total += v;
    if (total != 1) {
      throw std::invalid_argument("trace unmasks completion position " + std::to_string(i) + " " +
                                  std::to_string(total) + " times");
    }
  }
  return matrix;
}

std::vector<fs::path> cmd_export_heatmap(const std::vector<fs::path>& traces, const fs::path& out_dir) {
  std::vector<fs::path> written;
  for (const auto& path : traces) {
    decoding::RolloutTrace trace;
    try {
      trace = decoding::load_trace(path);
    } catch (const json::exception& e) {
      throw std::invalid_argument(path.string() + ": " + e.what());
    }
    std::vector<std::vector<int>> matrix;
    try {
      matrix = unmask_matrix(trace);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(path.string() + ": " + e.what());
    }
    const fs::path target = out_dir / fs::path(path.stem()).concat(".csv");
    auto csv = open_out(target);
    csv << "position";
    for (std::size_t k = 0; k < trace.nfe(); ++k) csv << ",step" << k + 1;
    csv << '\n';
    for (std::size_t i = 0; i < matrix.size(); ++i) {
      csv << i;
      for (int v : matrix[i]) csv << ',' << v;
      csv << '\n';
    }
    written.push_back(target);
  }
  return written;
}

BimodalReport run_bimodal_demo(const BimodalSection& config, std::uint64_t seed) {
  // Tokens A B C D, mask last. Target: AB or CD with probability 1/2 each.
  constexpr Token A = 0, B = 1, C = 2, D = 3, M = 4;
  const Vocabulary vocab(5);
  model::TabularDenoiser den(vocab, 2, model::TabularDenoiser::Context::kFullState);
  auto dist = [](Token a, double pa, Token b, double pb) {
    std::vector<double> p(5, 0.0);
    p[a] += pa;
    p[b] += pb;
    return p;
  };
  den.set_distribution(std::vector<Token>{M, M}, 0, dist(A, 0.5, C, 0.5));
  den.set_distribution(std::vector<Token>{M, M}, 1, dist(B, 0.5, D, 0.5));
  den.set_distribution(std::vector<Token>{A, M}, 1, dist(B, 1.0, B, 0.0));
  den.set_distribution(std::vector<Token>{C, M}, 1, dist(D, 1.0, D, 0.0));
  den.set_distribution(std::vector<Token>{M, B}, 0, dist(A, 1.0, A, 0.0));
  den.set_distribution(std::vector<Token>{M, D}, 0, dist(C, 1.0, C, 0.0));

  auto valid = [&](std::span<const Token> c) { return (c[0] == A && c[1] == B) || (c[0] == C && c[1] == D); };
  decoding::DecodeConfig dc;
  dc.mode = decoding::SelectionMode::kPlanner;
  dc.block_size = 2;
  dc.temperature = 1.0;
  dc.max_steps = 4;
  auto cross_mass = [&](model::UnmaskPlanner& planner, const decoding::DecodeConfig& c, double* nfe) {
    const auto e = likelihood::enumerate_all_rollouts(den, &planner, {}, 2, c);
    double cross = 0.0;
    for (const auto& [seq, p] : likelihood::marginal_outcome_distribution(e)) {
      if (!valid(seq)) cross += p;
    }
    if (nfe) {
      *nfe = 0.0;
      for (const auto& t : e.trajectories) *nfe += t.probability * static_cast<double>(t.steps.size());
    }
    return cross;
  };

  BimodalReport report;
  report.groups = config.groups;
  {
    model::TabularPlanner both(vocab, 2, false);
    both.fill_probability(1.0);
    report.one_step_cross_mass = cross_mass(both, dc, nullptr);
    decoding::DecodeConfig sequential = dc;
    sequential.block_size = 1;
    report.sequential_cross_mass = cross_mass(both, sequential, nullptr);
  }

  model::TabularPlanner planner(vocab, 2, true);
  report.initial_cross_mass = cross_mass(planner, dc, nullptr);
  grpo::RewardFn reward = [&](std::span<const Token>, const decoding::RolloutTrace& trace) {
    rewards::RewardParts parts;
    parts.task = valid(trace.completion()) ? rewards::kCorrectReward : 0.0;
    parts.step = rewards::efficiency_reward(trace.nfe());
    return rewards::total_reward(parts, rewards::RewardWeights{}, trace.nfe());
  };
  grpo::GrpoConfig gc;
  gc.group_size = config.group_size;
  gc.clip = config.clip;
  gc.total_groups = config.groups;
  gc.completion_len = 2;
  gc.decode = dc;
  gc.planner_optimizer = ad::AdamWConfig{.lr = config.lr, .weight_decay = 0.0};
  gc.train_model = false;
  gc.seed = derive_seed(seed, {kBimodal});
  grpo::GrpoTrainer trainer(den, planner, reward, gc);
  for (std::size_t g = 0; g < config.groups; ++g) trainer.train_group(std::vector<Token>{});
  report.post_grpo_cross_mass = cross_mass(planner, dc, &report.post_grpo_mean_nfe);
  report.post_grpo_valid_mass = 1.0 - report.post_grpo_cross_mass;
  return report;
}

BimodalReport cmd_demo_bimodal(const ExperimentConfig& config) {
  config.validate();
  echo_config(config);
  const BimodalReport r = run_bimodal_demo(config.bimodal, config.seed);
  write_json(config.out / "bimodal.json", json{{"one_step_cross_mass", r.one_step_cross_mass},
                                               {"sequential_cross_mass", r.sequential_cross_mass},
                                               {"initial_cross_mass", r.initial_cross_mass},
                                               {"post_grpo_cross_mass", r.post_grpo_cross_mass},
                                               {"post_grpo_valid_mass", r.post_grpo_valid_mass},
                                               {"post_grpo_mean_nfe", r.post_grpo_mean_nfe},
                                               {"groups", r.groups}});
  return r;
}

}  // namespace dultra::cli
