#include "dultra/mdlm/sequence.hpp"

namespace dultra {

std::vector<std::size_t> MaskedSequence::masked_positions(Token mask) const {
  std::vector<std::size_t> out;
  for (std::size_t i = prompt_len; i < tokens.size(); ++i)
    if (tokens[i] == mask) out.push_back(i);
  return out;
}

std::size_t MaskedSequence::masked_count(Token mask) const {
  std::size_t n = 0;
  for (std::size_t i = prompt_len; i < tokens.size(); ++i) n += tokens[i] == mask;
  return n;
}

double MaskedSequence::masked_fraction(Token mask) const {
  if (completion_len() == 0) return 0.0;
  return static_cast<double>(masked_count(mask)) / static_cast<double>(completion_len());
}

MaskedSequence MaskedSequence::all_masked(std::span<const Token> prompt, std::size_t completion_len,
                                          Token mask) {
  MaskedSequence s;
  s.tokens.assign(prompt.begin(), prompt.end());
  s.tokens.resize(prompt.size() + completion_len, mask);
  s.prompt_len = prompt.size();
  return s;
}

void check_tokens(std::span<const Token> tokens, const Vocabulary& vocab) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!vocab.valid(tokens[i])) {
      throw std::invalid_argument("token id " + std::to_string(tokens[i]) + " at position " +
                                  std::to_string(i) + " outside vocabulary of size " +
                                  std::to_string(vocab.size));
    }
  }
}

std::string format_tokens(std::span<const Token> tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(tokens[i]);
  }
  return s;
}

}  // namespace dultra
