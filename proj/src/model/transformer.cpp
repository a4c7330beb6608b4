#include "dultra/model/transformer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace dultra::model {

namespace {

using ad::Record;
using ad::Tensor;
using ad::Var;

constexpr double kPinnedLogit = -1e9;

Tensor gaussian(const ad::Shape& shape, double std, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.data()) v = std * rng.normal();
  return t;
}

Tensor ones(std::size_t n) { return Tensor::filled({n}, 1.0); }

void add_linear(ad::ParameterSet& p, const std::string& name, std::size_t in, std::size_t out,
                double gain, Rng& rng, bool zero = false) {
  p.add(name + ".w", zero ? Tensor({in, out}) : gaussian({in, out}, gain / std::sqrt(double(in)), rng));
  p.add(name + ".b", Tensor({out}));
}

Var param(Record& r, ad::ParameterSet& p, const std::string& name) { return r.parameter(p.at(name)); }

Var linear(Record& r, ad::ParameterSet& p, const std::string& name, Var x) {
  return ad::matmul(x, param(r, p, name + ".w")) + param(r, p, name + ".b");
}

Var silu(Var x) { return x * ad::sigmoid(x); }

void add_block(ad::ParameterSet& p, const std::string& prefix, std::size_t d, std::size_t mlp,
               std::size_t n_layers, double gain, Rng& rng, bool affine_norms) {
  const double out_gain = gain / std::sqrt(2.0 * static_cast<double>(n_layers));
  if (affine_norms) {
    p.add(prefix + ".ln1.g", ones(d));
    p.add(prefix + ".ln1.b", Tensor({d}));
  }
  add_linear(p, prefix + ".q", d, d, gain, rng);
  add_linear(p, prefix + ".k", d, d, gain, rng);
  add_linear(p, prefix + ".v", d, d, gain, rng);
  add_linear(p, prefix + ".o", d, d, out_gain, rng);
  if (affine_norms) {
    p.add(prefix + ".ln2.g", ones(d));
    p.add(prefix + ".ln2.b", Tensor({d}));
  }
  add_linear(p, prefix + ".fc1", d, mlp, gain, rng);
  add_linear(p, prefix + ".fc2", mlp, d, out_gain, rng);
}

Tensor causal_bias(std::size_t L) {
  Tensor t({L, L});
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = i + 1; j < L; ++j) t[i * L + j] = kPinnedLogit;
  return t;
}

Var attention(Record& r, ad::ParameterSet& p, const std::string& prefix, Var x, std::size_t heads,
              bool causal) {
  const std::size_t L = x.shape()[0];
  const std::size_t d = x.shape()[1];
  const std::size_t dh = d / heads;
  Var q = linear(r, p, prefix + ".q", x);
  Var k = linear(r, p, prefix + ".k", x);
  Var v = linear(r, p, prefix + ".v", x);
  Var bias;
  if (causal) bias = r.constant(causal_bias(L));
  std::vector<Var> outs;
  outs.reserve(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = ad::slice(q, 1, h * dh, (h + 1) * dh);
    Var kh = ad::slice(k, 1, h * dh, (h + 1) * dh);
    Var vh = ad::slice(v, 1, h * dh, (h + 1) * dh);
    Var scores = ad::matmul(qh, ad::transpose(kh)) * scale;
    if (causal) scores = scores + bias;
    outs.push_back(ad::matmul(ad::softmax(scores), vh));
  }
  Var merged = heads == 1 ? outs[0] : ad::concat(outs, 1);
  return linear(r, p, prefix + ".o", merged);
}

Var mlp(Record& r, ad::ParameterSet& p, const std::string& prefix, Var x) {
  return linear(r, p, prefix + ".fc2", silu(linear(r, p, prefix + ".fc1", x)));
}

Var affine_norm(Record& r, ad::ParameterSet& p, const std::string& name, Var x) {
  return ad::layer_norm(x) * param(r, p, name + ".g") + param(r, p, name + ".b");
}

// Pre-norm block with learned affine layer norms.
Var block(Record& r, ad::ParameterSet& p, const std::string& prefix, Var x, std::size_t heads,
          bool causal) {
  x = x + attention(r, p, prefix, affine_norm(r, p, prefix + ".ln1", x), heads, causal);
  return x + mlp(r, p, prefix, affine_norm(r, p, prefix + ".ln2", x));
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

// Shared body of the bidirectional and causal stacks: returns the final
// normalized hidden states [L, d].
Var run_stack(Record& r, ad::ParameterSet& p, const BackboneConfig& c,
              std::span<const Token> tokens) {
  if (tokens.empty()) throw std::invalid_argument("transformer: empty input");
  if (tokens.size() > c.max_len) {
    throw std::invalid_argument("transformer: sequence length " + std::to_string(tokens.size()) +
                                " exceeds max_len " + std::to_string(c.max_len));
  }
  check_tokens(tokens, Vocabulary(c.vocab));
  const auto positions = iota(tokens.size());
  Var x = ad::gather_rows(param(r, p, "tok_emb"), tokens) +
          ad::gather_rows(param(r, p, "pos_emb"), positions);
  const bool causal = c.attention == Attention::kCausal;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    x = block(r, p, "layer" + std::to_string(l), x, c.n_heads, causal);
  }
  return affine_norm(r, p, "ln_f", x);
}

void add_stack(ad::ParameterSet& p, const BackboneConfig& c, Rng& rng, const InitScheme& s) {
  p.add("tok_emb", gaussian({c.vocab, c.d_model}, s.gain, rng));
  p.add("pos_emb", gaussian({c.max_len, c.d_model}, 0.1 * s.gain, rng));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    add_block(p, "layer" + std::to_string(l), c.d_model, c.mlp_mult * c.d_model, c.n_layers,
              s.gain, rng, true);
  }
  p.add("ln_f.g", ones(c.d_model));
  p.add("ln_f.b", Tensor({c.d_model}));
  add_linear(p, "head", c.d_model, c.vocab, s.gain, rng);
}

}  // namespace

void BackboneConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw std::invalid_argument("backbone: d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (n_layers == 0 || max_len == 0 || vocab < 2 || mlp_mult == 0) {
    throw std::invalid_argument("backbone: layers, max_len, mlp_mult must be positive and vocab >= 2");
  }
}

void PlannerConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw std::invalid_argument("planner: d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (input_dim == 0 || time_features == 0 || time_features % 2 != 0 || vocab < 2) {
    throw std::invalid_argument("planner: input_dim and an even time_features count are required");
  }
}

// ---- MaskedDenoiser ---------------------------------------------------------

MaskedDenoiser::MaskedDenoiser(const BackboneConfig& config, Rng& rng, const InitScheme& scheme)
    : config_(config), vocab_(config.vocab) {
  config_.validate();
  if (config_.attention != Attention::kBidirectional) {
    throw std::invalid_argument("MaskedDenoiser requires bidirectional attention");
  }
  add_stack(params_, config_, rng, scheme);
}

DenoiserOutput MaskedDenoiser::forward(Record& r, std::span<const Token> tokens) {
  Var hidden = run_stack(r, params_, config_, tokens);
  Tensor pin({config_.vocab});
  pin[vocab_.mask()] = kPinnedLogit;
  Var logits = linear(r, params_, "head", hidden) + r.constant(std::move(pin));
  return {logits, hidden};
}

// ---- CausalTeacher ----------------------------------------------------------

CausalTeacher::CausalTeacher(const BackboneConfig& config, Rng& rng, const InitScheme& scheme)
    : config_(config), vocab_(config.vocab) {
  config_.attention = Attention::kCausal;
  config_.validate();
  add_stack(params_, config_, rng, scheme);
}

Var CausalTeacher::logits(Record& r, std::span<const Token> tokens) {
  return linear(r, params_, "head", run_stack(r, params_, config_, tokens));
}

Var CausalTeacher::completion_logprobs(Record& r, std::span<const Token> prompt,
                                       std::span<const Token> completion) {
  if (prompt.empty()) throw std::invalid_argument("teacher: prompt must be nonempty");
  if (completion.empty()) throw std::invalid_argument("teacher: completion must be nonempty");
  std::vector<Token> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), completion.begin(), completion.end() - 1);
  Var lp = ad::log_softmax(logits(r, seq));
  const std::size_t m = config_.vocab;
  std::vector<std::size_t> offsets;
  for (std::size_t i = 0; i < completion.size(); ++i) {
    offsets.push_back((prompt.size() - 1 + i) * m + completion[i]);
  }
  return ad::take(lp, offsets);
}

// ---- PlannerHead ------------------------------------------------------------

PlannerHead::PlannerHead(const PlannerConfig& config, Rng& rng, const InitScheme& s)
    : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  add_linear(params_, "in_proj", config_.input_dim, d, s.gain, rng);
  params_.add("tok_emb", gaussian({config_.vocab, d}, s.gain, rng));
  params_.add("mask_emb", gaussian({1, d}, s.gain, rng));
  add_linear(params_, "time", config_.time_features, d, s.gain, rng);
  add_linear(params_, "adaln", d, 6 * d, 0.1 * s.gain, rng, s.zero_modulation);
  add_block(params_, "block", d, config_.mlp_mult * d, 1, s.gain, rng, false);
  add_linear(params_, "out", d, 1, s.gain, rng, s.zero_planner_output);
}

Var PlannerHead::logits(Record& r, const DenoiserOutput& denoised, std::span<const Token> tokens,
                        double time_cond) {
  if (!(time_cond >= 0.0 && time_cond <= 1.0)) {
    throw std::domain_error("planner: time_cond " + std::to_string(time_cond) + " outside [0, 1]");
  }
  if (!denoised.hidden.valid()) throw std::invalid_argument("planner: denoiser exposes no hidden states");
  const std::size_t L = tokens.size();
  const std::size_t d = config_.d_model;
  if (denoised.hidden.shape() != ad::Shape{L, config_.input_dim}) {
    throw ad::ShapeError("planner: hidden shape " + ad::to_string(denoised.hidden.shape()) +
                         " does not match " + std::to_string(L) + " tokens of width " +
                         std::to_string(config_.input_dim));
  }
  check_tokens(tokens, Vocabulary(config_.vocab));
  const Token mask = config_.vocab - 1;

  // Mask embedding enters only at masked positions: gather from {0, mask_emb}.
  std::vector<std::size_t> is_masked(L);
  for (std::size_t i = 0; i < L; ++i) is_masked[i] = tokens[i] == mask;
  std::vector<Var> rows{r.constant(Tensor({1, d})), param(r, params_, "mask_emb")};
  Var mask_table = ad::concat(rows, 0);

  Var x = linear(r, params_, "in_proj", denoised.hidden) +
          ad::gather_rows(param(r, params_, "tok_emb"), tokens) +
          ad::gather_rows(mask_table, is_masked);

  // Sinusoidal features of the time condition.
  const std::size_t half = config_.time_features / 2;
  Tensor feat({1, config_.time_features});
  for (std::size_t k = 0; k < half; ++k) {
    const double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
    feat[k] = std::sin(1000.0 * time_cond * freq);
    feat[half + k] = std::cos(1000.0 * time_cond * freq);
  }
  Var temb = silu(linear(r, params_, "time", r.constant(std::move(feat))));
  Var mod = ad::reshape(linear(r, params_, "adaln", temb), {6 * d});
  auto chunk = [&](std::size_t i) { return ad::slice(mod, 0, i * d, (i + 1) * d); };
  Var one = r.constant(Tensor::scalar(1.0));

  Var h = ad::layer_norm(x) * (one + chunk(1)) + chunk(0);
  x = x + attention(r, params_, "block", h, config_.n_heads, false) * chunk(2);
  h = ad::layer_norm(x) * (one + chunk(4)) + chunk(3);
  x = x + mlp(r, params_, "block", h) * chunk(5);
  return ad::reshape(linear(r, params_, "out", ad::layer_norm(x)), {L});
}

}  // namespace dultra::model
