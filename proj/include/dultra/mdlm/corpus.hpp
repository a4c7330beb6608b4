#pragma once

#include <filesystem>
#include <vector>

#include "dultra/mdlm/sequence.hpp"

namespace dultra {

/// A prompt and its gold completion.
struct Example {
  std::vector<Token> prompt;
  std::vector<Token> completion;

  MaskedSequence sequence() const;
};

// Corpus files hold one example per line: prompt ids, a `|` column, then
// completion ids, all whitespace separated. Blank lines and lines starting
// with `#` are skipped.
std::vector<Example> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const std::vector<Example>& corpus);

}  // namespace dultra
