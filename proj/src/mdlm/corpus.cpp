#include "dultra/mdlm/corpus.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace dultra {

MaskedSequence Example::sequence() const {
  MaskedSequence s;
  s.tokens = prompt;
  s.tokens.insert(s.tokens.end(), completion.begin(), completion.end());
  s.prompt_len = prompt.size();
  return s;
}

std::vector<Example> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus " + path.string());
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    Example ex;
    bool after_bar = false;
    std::string word;
    while (ss >> word) {
      if (word == "|") {
        if (after_bar) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": second separator");
        after_bar = true;
        continue;
      }
      std::size_t used = 0;
      unsigned long long id = 0;
      try {
        id = std::stoull(word, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != word.size()) {
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad token '" + word + "'");
      }
      (after_bar ? ex.completion : ex.prompt).push_back(static_cast<Token>(id));
    }
    if (!after_bar) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": missing '|' separator");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void write_corpus(const std::filesystem::path& path, const std::vector<Example>& corpus) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write corpus " + path.string());
  for (const auto& ex : corpus) {
    out << format_tokens(ex.prompt) << " | " << format_tokens(ex.completion) << '\n';
  }
}

}  // namespace dultra
