#include "dultra/cli/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace dultra::cli {

namespace {

void check_keys(const YAML::Node& node, const std::string& section, const std::set<std::string>& allowed) {
  if (!node.IsMap()) throw ConfigError("config: '" + section + "' must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ConfigError("config: unknown key '" + section + "." + key + "'");
  }
}

template <typename T>
void read(const YAML::Node& node, const std::string& section, const char* key, T& out) {
  if (!node[key]) return;
  try {
    out = node[key].as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("config: bad value for '" + section + "." + key + "'");
  }
}

// Clip thresholds accept "-inf" for no clipping.
void read_clip(const YAML::Node& node, const std::string& section, double& out) {
  if (!node["clip"]) return;
  const auto text = node["clip"].as<std::string>();
  if (text == "-inf" || text == "none") {
    out = -std::numeric_limits<double>::infinity();
    return;
  }
  read(node, section, "clip", out);
}

// Shortest text that parses back to the same double.
std::string real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string clip_text(double c) { return std::isinf(c) && c < 0 ? "-inf" : real(c); }

std::vector<std::string> reals(const std::vector<double>& v) {
  std::vector<std::string> out;
  for (double x : v) out.push_back(real(x));
  return out;
}

void read_backbone(const YAML::Node& n, const std::string& s, model::BackboneConfig& b) {
  check_keys(n, s, {"d_model", "n_heads", "n_layers", "max_len", "mlp_mult"});
  read(n, s, "d_model", b.d_model);
  read(n, s, "n_heads", b.n_heads);
  read(n, s, "n_layers", b.n_layers);
  read(n, s, "max_len", b.max_len);
  read(n, s, "mlp_mult", b.mlp_mult);
}

RewardKind parse_reward_kind(const std::string& s) {
  if (s == "standard") return RewardKind::kStandard;
  if (s == "unmask-count-penalty") return RewardKind::kUnmaskCountPenalty;
  throw ConfigError("config: unknown grpo.reward '" + s + "' (expected standard or unmask-count-penalty)");
}

std::string reward_kind_name(RewardKind k) {
  return k == RewardKind::kStandard ? "standard" : "unmask-count-penalty";
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    backbone.validate();
    planner.validate();
    teacher.backbone.validate();
    decode.validate();
    weights.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (planner.input_dim != backbone.d_model) {
    throw ConfigError("config: planner input width must equal backbone.d_model");
  }
  if (backbone.vocab != rewards::toy::kVocabSize || planner.vocab != rewards::toy::kVocabSize ||
      teacher.backbone.vocab != rewards::toy::kVocabSize) {
    throw ConfigError("config: vocabulary size must be " + std::to_string(rewards::toy::kVocabSize));
  }
  const std::size_t len = rewards::toy::kPromptLen + rewards::toy::kCompletionLen;
  if (backbone.max_len < len || teacher.backbone.max_len < len) {
    throw ConfigError("config: max_len must be at least " + std::to_string(len));
  }
  for (double p : task.style.majority) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("config: task.style_majority entries must be in [0, 1]");
  }
  if (task.corpus_size == 0 || task.eval_prompts == 0) throw ConfigError("config: task sizes must be positive");
  if (pretrain.batch_size == 0 || teacher.batch_size == 0 || planner_init.batch_size == 0) {
    throw ConfigError("config: batch sizes must be positive");
  }
  if (grpo.group_size < 2) throw ConfigError("config: grpo.group_size must be at least 2");
  if (std::isnan(grpo.clip)) throw ConfigError("config: grpo.clip is NaN");
  if (evaluate.trials == 0 || evaluate.alphas.empty()) throw ConfigError("config: evaluate needs alphas and trials");
  for (double a : evaluate.alphas) {
    if (!(a > 0.0)) throw ConfigError("config: evaluate.alphas must be positive");
  }
  if (bimodal.group_size < 2) throw ConfigError("config: bimodal.group_size must be at least 2");
}

ExperimentConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: YAML parse error: ") + e.what());
  }
  ExperimentConfig c;
  if (root.IsNull()) return c;
  check_keys(root, "root",
             {"seed", "out", "task", "backbone", "planner", "teacher", "pretrain", "decode", "planner_init", "grpo",
              "rewards", "evaluate", "bimodal"});
  read(root, "root", "seed", c.seed);
  if (root["out"]) c.out = root["out"].as<std::string>();

  if (auto n = root["task"]) {
    check_keys(n, "task", {"kind", "style_majority", "corpus_size", "eval_prompts"});
    if (n["kind"]) {
      try {
        c.task.kind = rewards::parse_task(n["kind"].as<std::string>());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
    }
    if (n["style_majority"]) {
      const auto v = n["style_majority"].as<std::vector<double>>();
      if (v.size() != c.task.style.majority.size()) throw ConfigError("config: task.style_majority needs 3 entries");
      for (std::size_t i = 0; i < v.size(); ++i) c.task.style.majority[i] = v[i];
    }
    read(n, "task", "corpus_size", c.task.corpus_size);
    read(n, "task", "eval_prompts", c.task.eval_prompts);
  }
  if (auto n = root["backbone"]) read_backbone(n, "backbone", c.backbone);
  if (auto n = root["planner"]) {
    check_keys(n, "planner", {"d_model", "n_heads", "mlp_mult", "time_features"});
    read(n, "planner", "d_model", c.planner.d_model);
    read(n, "planner", "n_heads", c.planner.n_heads);
    read(n, "planner", "mlp_mult", c.planner.mlp_mult);
    read(n, "planner", "time_features", c.planner.time_features);
  }
  c.planner.input_dim = c.backbone.d_model;
  if (auto n = root["teacher"]) {
    check_keys(n, "teacher", {"backbone", "steps", "batch_size", "log_every", "lr"});
    if (n["backbone"]) read_backbone(n["backbone"], "teacher.backbone", c.teacher.backbone);
    read(n, "teacher", "steps", c.teacher.steps);
    read(n, "teacher", "batch_size", c.teacher.batch_size);
    read(n, "teacher", "log_every", c.teacher.log_every);
    read(n, "teacher", "lr", c.teacher.lr);
  }
  if (auto n = root["pretrain"]) {
    check_keys(n, "pretrain",
               {"steps", "batch_size", "log_every", "lr", "warmup_steps", "cosine_decay", "clip_norm", "schedule"});
    read(n, "pretrain", "warmup_steps", c.pretrain.warmup_steps);
    read(n, "pretrain", "cosine_decay", c.pretrain.cosine_decay);
    read(n, "pretrain", "clip_norm", c.pretrain.clip_norm);
    read(n, "pretrain", "steps", c.pretrain.steps);
    read(n, "pretrain", "batch_size", c.pretrain.batch_size);
    read(n, "pretrain", "log_every", c.pretrain.log_every);
    read(n, "pretrain", "lr", c.pretrain.lr);
    if (n["schedule"]) {
      try {
        c.pretrain.schedule = mdlm::parse_schedule(n["schedule"].as<std::string>());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
    }
  }
  if (auto n = root["decode"]) {
    check_keys(n, "decode", {"block_size", "threshold", "temperature", "alpha", "max_steps", "mode"});
    read(n, "decode", "block_size", c.decode.block_size);
    read(n, "decode", "threshold", c.decode.threshold);
    read(n, "decode", "temperature", c.decode.temperature);
    read(n, "decode", "alpha", c.decode.alpha);
    read(n, "decode", "max_steps", c.decode.max_steps);
    if (n["mode"]) {
      try {
        c.decode.mode = decoding::parse_mode(n["mode"].as<std::string>());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
    }
  }
  if (auto n = root["planner_init"]) {
    check_keys(n, "planner_init", {"train_prompts", "heldout_prompts", "epochs", "batch_size", "lr", "w_pos_cap"});
    read(n, "planner_init", "train_prompts", c.planner_init.train_prompts);
    read(n, "planner_init", "heldout_prompts", c.planner_init.heldout_prompts);
    read(n, "planner_init", "epochs", c.planner_init.epochs);
    read(n, "planner_init", "batch_size", c.planner_init.batch_size);
    read(n, "planner_init", "lr", c.planner_init.lr);
    read(n, "planner_init", "w_pos_cap", c.planner_init.w_pos_cap);
  }
  if (auto n = root["grpo"]) {
    check_keys(n, "grpo", {"group_size", "clip", "total_groups", "model_lr", "planner_lr", "train_model",
                           "checkpoint_every", "reward"});
    read(n, "grpo", "group_size", c.grpo.group_size);
    read_clip(n, "grpo", c.grpo.clip);
    read(n, "grpo", "total_groups", c.grpo.total_groups);
    read(n, "grpo", "model_lr", c.grpo.model_lr);
    read(n, "grpo", "planner_lr", c.grpo.planner_lr);
    read(n, "grpo", "train_model", c.grpo.train_model);
    read(n, "grpo", "checkpoint_every", c.grpo.checkpoint_every);
    if (n["reward"]) c.grpo.reward = parse_reward_kind(n["reward"].as<std::string>());
  }
  if (auto n = root["rewards"]) {
    check_keys(n, "rewards", {"preset", "task", "format", "step", "distill", "beta"});
    if (n["preset"]) {
      c.reward_preset = n["preset"].as<std::string>();
      try {
        c.weights = rewards::RewardWeights::preset(c.reward_preset);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
    }
    read(n, "rewards", "task", c.weights.task);
    read(n, "rewards", "format", c.weights.format);
    read(n, "rewards", "step", c.weights.step);
    read(n, "rewards", "distill", c.weights.distill);
    read(n, "rewards", "beta", c.weights.beta);
  }
  if (auto n = root["evaluate"]) {
    check_keys(n, "evaluate", {"alphas", "trials", "saved_traces"});
    read(n, "evaluate", "alphas", c.evaluate.alphas);
    read(n, "evaluate", "trials", c.evaluate.trials);
    read(n, "evaluate", "saved_traces", c.evaluate.saved_traces);
  }
  if (auto n = root["bimodal"]) {
    check_keys(n, "bimodal", {"groups", "group_size", "lr", "clip"});
    read(n, "bimodal", "groups", c.bimodal.groups);
    read(n, "bimodal", "group_size", c.bimodal.group_size);
    read(n, "bimodal", "lr", c.bimodal.lr);
    read_clip(n, "bimodal", c.bimodal.clip);
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string dump_config(const ExperimentConfig& c) {
  YAML::Emitter out;
  auto backbone = [&](const model::BackboneConfig& b) {
    out << YAML::BeginMap << YAML::Key << "d_model" << YAML::Value << b.d_model << YAML::Key << "n_heads"
        << YAML::Value << b.n_heads << YAML::Key << "n_layers" << YAML::Value << b.n_layers << YAML::Key
        << "max_len" << YAML::Value << b.max_len << YAML::Key << "mlp_mult" << YAML::Value << b.mlp_mult
        << YAML::EndMap;
  };
  out << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::Key << "out" << YAML::Value << c.out.string();
  out << YAML::Key << "task" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value << rewards::task_name(c.task.kind);
  out << YAML::Key << "style_majority" << YAML::Value << YAML::Flow
      << reals(std::vector<double>(c.task.style.majority.begin(), c.task.style.majority.end()));
  out << YAML::Key << "corpus_size" << YAML::Value << c.task.corpus_size;
  out << YAML::Key << "eval_prompts" << YAML::Value << c.task.eval_prompts << YAML::EndMap;
  out << YAML::Key << "backbone" << YAML::Value;
  backbone(c.backbone);
  out << YAML::Key << "planner" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "d_model" << YAML::Value << c.planner.d_model;
  out << YAML::Key << "n_heads" << YAML::Value << c.planner.n_heads;
  out << YAML::Key << "mlp_mult" << YAML::Value << c.planner.mlp_mult;
  out << YAML::Key << "time_features" << YAML::Value << c.planner.time_features << YAML::EndMap;
  out << YAML::Key << "teacher" << YAML::Value << YAML::BeginMap << YAML::Key << "backbone" << YAML::Value;
  backbone(c.teacher.backbone);
  out << YAML::Key << "steps" << YAML::Value << c.teacher.steps;
  out << YAML::Key << "batch_size" << YAML::Value << c.teacher.batch_size;
  out << YAML::Key << "log_every" << YAML::Value << c.teacher.log_every;
  out << YAML::Key << "lr" << YAML::Value << real(c.teacher.lr) << YAML::EndMap;
  out << YAML::Key << "pretrain" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "steps" << YAML::Value << c.pretrain.steps;
  out << YAML::Key << "batch_size" << YAML::Value << c.pretrain.batch_size;
  out << YAML::Key << "log_every" << YAML::Value << c.pretrain.log_every;
  out << YAML::Key << "lr" << YAML::Value << real(c.pretrain.lr);
  out << YAML::Key << "warmup_steps" << YAML::Value << c.pretrain.warmup_steps;
  out << YAML::Key << "cosine_decay" << YAML::Value << c.pretrain.cosine_decay;
  out << YAML::Key << "clip_norm" << YAML::Value << real(c.pretrain.clip_norm);
  out << YAML::Key << "schedule" << YAML::Value
      << (c.pretrain.schedule == mdlm::ScheduleKind::kLinear ? "linear" : "cosine") << YAML::EndMap;
  out << YAML::Key << "decode" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "block_size" << YAML::Value << c.decode.block_size;
  out << YAML::Key << "threshold" << YAML::Value << real(c.decode.threshold);
  out << YAML::Key << "temperature" << YAML::Value << real(c.decode.temperature);
  out << YAML::Key << "alpha" << YAML::Value << real(c.decode.alpha);
  out << YAML::Key << "max_steps" << YAML::Value << c.decode.max_steps;
  out << YAML::Key << "mode" << YAML::Value << decoding::mode_name(c.decode.mode) << YAML::EndMap;
  out << YAML::Key << "planner_init" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "train_prompts" << YAML::Value << c.planner_init.train_prompts;
  out << YAML::Key << "heldout_prompts" << YAML::Value << c.planner_init.heldout_prompts;
  out << YAML::Key << "epochs" << YAML::Value << c.planner_init.epochs;
  out << YAML::Key << "batch_size" << YAML::Value << c.planner_init.batch_size;
  out << YAML::Key << "lr" << YAML::Value << real(c.planner_init.lr);
  out << YAML::Key << "w_pos_cap" << YAML::Value << real(c.planner_init.w_pos_cap) << YAML::EndMap;
  out << YAML::Key << "grpo" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "group_size" << YAML::Value << c.grpo.group_size;
  out << YAML::Key << "clip" << YAML::Value << clip_text(c.grpo.clip);
  out << YAML::Key << "total_groups" << YAML::Value << c.grpo.total_groups;
  out << YAML::Key << "model_lr" << YAML::Value << real(c.grpo.model_lr);
  out << YAML::Key << "planner_lr" << YAML::Value << real(c.grpo.planner_lr);
  out << YAML::Key << "train_model" << YAML::Value << c.grpo.train_model;
  out << YAML::Key << "checkpoint_every" << YAML::Value << c.grpo.checkpoint_every;
  out << YAML::Key << "reward" << YAML::Value << reward_kind_name(c.grpo.reward) << YAML::EndMap;
  out << YAML::Key << "rewards" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "preset" << YAML::Value << c.reward_preset;
  out << YAML::Key << "task" << YAML::Value << real(c.weights.task);
  out << YAML::Key << "format" << YAML::Value << real(c.weights.format);
  out << YAML::Key << "step" << YAML::Value << real(c.weights.step);
  out << YAML::Key << "distill" << YAML::Value << real(c.weights.distill);
  out << YAML::Key << "beta" << YAML::Value << real(c.weights.beta) << YAML::EndMap;
  out << YAML::Key << "evaluate" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "alphas" << YAML::Value << YAML::Flow << reals(c.evaluate.alphas);
  out << YAML::Key << "trials" << YAML::Value << c.evaluate.trials;
  out << YAML::Key << "saved_traces" << YAML::Value << c.evaluate.saved_traces << YAML::EndMap;
  out << YAML::Key << "bimodal" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "groups" << YAML::Value << c.bimodal.groups;
  out << YAML::Key << "group_size" << YAML::Value << c.bimodal.group_size;
  out << YAML::Key << "lr" << YAML::Value << real(c.bimodal.lr);
  out << YAML::Key << "clip" << YAML::Value << clip_text(c.bimodal.clip) << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace dultra::cli
