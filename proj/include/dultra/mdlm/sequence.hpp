#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dultra {

using Token = std::size_t;

/// Token alphabet. The mask token is always the last id.
struct Vocabulary {
  std::size_t size = 0;

  explicit Vocabulary(std::size_t m) : size(m) {
    if (m < 2) throw std::invalid_argument("vocabulary needs at least one token besides mask");
  }
  Token mask() const noexcept { return size - 1; }
  bool valid(Token t) const noexcept { return t < size; }
};

/// Prompt followed by a completion; positions before prompt_len are never masked.
struct MaskedSequence {
  std::vector<Token> tokens;
  std::size_t prompt_len = 0;

  std::size_t length() const noexcept { return tokens.size(); }
  std::size_t completion_len() const noexcept { return tokens.size() - prompt_len; }
  std::span<const Token> prompt() const { return {tokens.data(), prompt_len}; }
  std::span<const Token> completion() const {
    return {tokens.data() + prompt_len, tokens.size() - prompt_len};
  }

  /// Completion positions (absolute indices) currently holding `mask`, ascending.
  std::vector<std::size_t> masked_positions(Token mask) const;
  std::size_t masked_count(Token mask) const;
  /// Fraction of completion positions still masked, in [0, 1].
  double masked_fraction(Token mask) const;

  /// Prompt followed by `completion_len` mask tokens.
  static MaskedSequence all_masked(std::span<const Token> prompt, std::size_t completion_len,
                                   Token mask);
};

/// Throws std::invalid_argument when any id is outside the vocabulary.
void check_tokens(std::span<const Token> tokens, const Vocabulary& vocab);

std::string format_tokens(std::span<const Token> tokens);

}  // namespace dultra
