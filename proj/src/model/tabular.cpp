#include "dultra/model/tabular.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dultra::model {

namespace {

constexpr std::size_t kMaxRows = std::size_t{1} << 22;

double prob_to_logit(double p) { return p > 0.0 ? std::log(p) : kImpossibleLogit; }

ad::Tensor mask_pin(const Vocabulary& vocab) {
  ad::Tensor pin({vocab.size});
  pin[vocab.mask()] = kImpossibleLogit;
  return pin;
}

}  // namespace

std::size_t state_count(std::size_t vocab, std::size_t length) {
  std::size_t n = 1;
  for (std::size_t i = 0; i < length; ++i) {
    n *= vocab;
    if (n > kMaxRows) throw std::invalid_argument("tabular model: state space too large");
  }
  return n;
}

std::size_t state_index(std::span<const Token> tokens, std::size_t vocab) {
  std::size_t idx = 0;
  for (std::size_t i = tokens.size(); i-- > 0;) idx = idx * vocab + tokens[i];
  return idx;
}

// ---- TabularDenoiser --------------------------------------------------------

TabularDenoiser::TabularDenoiser(const Vocabulary& vocab, std::size_t length, Context context)
    : vocab_(vocab), length_(length), context_(context) {
  const std::size_t states = context == Context::kNone ? 1 : state_count(vocab.size, length);
  params_.add("logits", ad::Tensor({states * length, vocab.size}));
}

std::size_t TabularDenoiser::row_index(std::span<const Token> state, std::size_t position) const {
  if (position >= length_) throw std::out_of_range("tabular denoiser: position out of range");
  const std::size_t s = context_ == Context::kNone ? 0 : state_index(state, vocab_.size);
  return s * length_ + position;
}

DenoiserOutput TabularDenoiser::forward(ad::Record& r, std::span<const Token> tokens) {
  if (tokens.size() != length_) {
    throw std::invalid_argument("tabular denoiser: expected " + std::to_string(length_) +
                                " tokens, got " + std::to_string(tokens.size()));
  }
  check_tokens(tokens, vocab_);
  std::vector<std::size_t> rows(length_);
  for (std::size_t i = 0; i < length_; ++i) rows[i] = row_index(tokens, i);
  ad::Var logits = ad::gather_rows(r.parameter(params_[0]), rows) + r.constant(mask_pin(vocab_));
  return {logits, ad::Var{}};
}

void TabularDenoiser::set_distribution(std::span<const Token> state, std::size_t position,
                                       std::span<const double> probs) {
  if (probs.size() != vocab_.size) throw std::invalid_argument("tabular denoiser: distribution size");
  auto r = row(state, position);
  for (std::size_t v = 0; v < probs.size(); ++v) r[v] = prob_to_logit(probs[v]);
}

std::span<double> TabularDenoiser::row(std::span<const Token> state, std::size_t position) {
  return params_[0].value.data().subspan(row_index(state, position) * vocab_.size, vocab_.size);
}

// ---- TabularPlanner ---------------------------------------------------------

TabularPlanner::TabularPlanner(const Vocabulary& vocab, std::size_t length, bool state_dependent)
    : vocab_(vocab), length_(length), state_dependent_(state_dependent) {
  const std::size_t states = state_dependent ? state_count(vocab.size, length) : 1;
  params_.add("logits", ad::Tensor({states, length}));
}

std::size_t TabularPlanner::row_of(std::span<const Token> tokens) const {
  return state_dependent_ ? state_index(tokens, vocab_.size) : 0;
}

ad::Var TabularPlanner::logits(ad::Record& r, const DenoiserOutput&, std::span<const Token> tokens,
                               double time_cond) {
  if (!(time_cond >= 0.0 && time_cond <= 1.0)) {
    throw std::domain_error("planner: time_cond " + std::to_string(time_cond) + " outside [0, 1]");
  }
  if (tokens.size() != length_) throw std::invalid_argument("tabular planner: wrong sequence length");
  check_tokens(tokens, vocab_);
  const std::size_t row = row_of(tokens);
  return ad::reshape(ad::gather_rows(r.parameter(params_[0]), std::span<const std::size_t>(&row, 1)),
                     {length_});
}

void TabularPlanner::set_probability(std::span<const Token> state, std::size_t position, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("tabular planner: probability must be in (0, 1]");
  const double logit = p >= 1.0 ? 40.0 : std::log(p) - std::log1p(-p);
  params_[0].value[row_of(state) * length_ + position] = logit;
}

void TabularPlanner::fill_probability(double p) {
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("tabular planner: probability must be in (0, 1]");
  params_[0].value.fill(p >= 1.0 ? 40.0 : std::log(p) - std::log1p(-p));
}

// ---- TabularTeacher ---------------------------------------------------------

TabularTeacher::TabularTeacher(const Vocabulary& vocab, std::size_t max_prefix)
    : vocab_(vocab), max_prefix_(max_prefix) {
  std::size_t rows = 0, level = 1;
  for (std::size_t k = 0; k <= max_prefix; ++k) {
    rows += level;
    level *= vocab.size;
    if (rows > kMaxRows) throw std::invalid_argument("tabular teacher: prefix space too large");
  }
  params_.add("logits", ad::Tensor({rows, vocab.size}));
}

std::size_t TabularTeacher::prefix_index(std::span<const Token> prefix) const {
  if (prefix.size() > max_prefix_) throw std::invalid_argument("tabular teacher: prefix too long");
  std::size_t offset = 0, level = 1;
  for (std::size_t k = 0; k < prefix.size(); ++k) {
    offset += level;
    level *= vocab_.size;
  }
  return offset + state_index(prefix, vocab_.size);
}

ad::Var TabularTeacher::completion_logprobs(ad::Record& r, std::span<const Token> prompt,
                                            std::span<const Token> completion) {
  if (completion.empty()) throw std::invalid_argument("teacher: completion must be nonempty");
  std::vector<Token> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), completion.begin(), completion.end());
  check_tokens(seq, vocab_);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < completion.size(); ++i) {
    rows.push_back(prefix_index(std::span<const Token>(seq.data(), prompt.size() + i)));
  }
  ad::Var lp = ad::log_softmax(ad::gather_rows(r.parameter(params_[0]), rows));
  std::vector<std::size_t> offsets;
  for (std::size_t i = 0; i < completion.size(); ++i) offsets.push_back(i * vocab_.size + completion[i]);
  return ad::take(lp, offsets);
}

void TabularTeacher::set_distribution(std::span<const Token> prefix, std::span<const double> probs) {
  if (probs.size() != vocab_.size) throw std::invalid_argument("tabular teacher: distribution size");
  const std::size_t row = prefix_index(prefix);
  for (std::size_t v = 0; v < probs.size(); ++v) params_[0].value[row * vocab_.size + v] = prob_to_logit(probs[v]);
}

}  // namespace dultra::model
