#include "dultra/rewards/toy.hpp"

#include <algorithm>
#include <stdexcept>

namespace dultra::rewards {

namespace toy {

std::string token_name(Token t) {
  if (t < 10) return std::to_string(t);
  if (t < kLetter0 + kLetters) return std::string(1, static_cast<char>('a' + (t - kLetter0)));
  if (t < kStyle0 + 2 * kStyleSlots) {
    const std::size_t k = t - kStyle0;
    return std::string("s") + std::to_string(k / 2) + (k % 2 ? "'" : "");
  }
  switch (t) {
    case kAdd: return "ADD";
    case kSort: return "SORT";
    case kCopy: return "COPY";
    case kPlus: return "+";
    case kEquals: return "=";
    case kBoa: return "[";
    case kEoa: return "]";
    case kPad: return "_";
    case kMask: return "?";
    default: return "<" + std::to_string(t) + ">";
  }
}

std::string render(std::span<const Token> tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += token_name(tokens[i]);
  }
  return s;
}

}  // namespace toy

TaskKind parse_task(const std::string& name) {
  if (name == "modular-addition") return TaskKind::kModularAddition;
  if (name == "sequence-sort") return TaskKind::kSequenceSort;
  if (name == "pattern-copy") return TaskKind::kPatternCopy;
  throw std::invalid_argument("unknown task '" + name +
                              "' (expected modular-addition, sequence-sort or pattern-copy)");
}

std::string task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kModularAddition: return "modular-addition";
    case TaskKind::kSequenceSort: return "sequence-sort";
    case TaskKind::kPatternCopy: return "pattern-copy";
  }
  return "?";
}

namespace {

bool is_digit(Token t) { return t < 10; }
bool is_letter(Token t) { return t >= toy::kLetter0 && t < toy::kLetter0 + toy::kLetters; }

}  // namespace

std::vector<Token> TaskSpec::sample_prompt(Rng& rng) const {
  switch (kind) {
    case TaskKind::kModularAddition:
      return {toy::kAdd, rng.index(10), toy::kPlus, rng.index(10), toy::kEquals};
    case TaskKind::kSequenceSort:
      return {toy::kSort, rng.index(10), rng.index(10), rng.index(10), rng.index(10)};
    case TaskKind::kPatternCopy: {
      std::vector<Token> p{toy::kCopy};
      for (int i = 0; i < 4; ++i) p.push_back(toy::kLetter0 + rng.index(toy::kLetters));
      return p;
    }
  }
  return {};
}

std::optional<std::vector<Token>> TaskSpec::gold_answer(std::span<const Token> p) const {
  if (p.size() != toy::kPromptLen) return std::nullopt;
  switch (kind) {
    case TaskKind::kModularAddition:
      if (p[0] != toy::kAdd || !is_digit(p[1]) || p[2] != toy::kPlus || !is_digit(p[3]) ||
          p[4] != toy::kEquals) {
        return std::nullopt;
      }
      return std::vector<Token>{(p[1] + p[3]) % 10};
    case TaskKind::kSequenceSort: {
      if (p[0] != toy::kSort || !std::all_of(p.begin() + 1, p.end(), is_digit)) return std::nullopt;
      std::vector<Token> d(p.begin() + 1, p.end());
      std::sort(d.begin(), d.end());
      return d;
    }
    case TaskKind::kPatternCopy:
      if (p[0] != toy::kCopy || !std::all_of(p.begin() + 1, p.end(), is_letter)) return std::nullopt;
      return std::vector<Token>(p.begin() + 1, p.end());
  }
  return std::nullopt;
}

Example TaskSpec::sample_example(Rng& rng) const {
  Example ex;
  ex.prompt = sample_prompt(rng);
  for (std::size_t s = 0; s < toy::kStyleSlots; ++s) {
    const bool minority = rng.uniform() >= style.majority[s];
    ex.completion.push_back(toy::kStyle0 + 2 * s + (minority ? 1 : 0));
  }
  if (kind == TaskKind::kModularAddition) {
    ex.completion.insert(ex.completion.end(), ex.prompt.begin() + 1, ex.prompt.end());
  }
  ex.completion.push_back(begin_marker);
  const std::vector<Token> answer = *gold_answer(ex.prompt);
  ex.completion.insert(ex.completion.end(), answer.begin(), answer.end());
  ex.completion.push_back(end_marker);
  while (ex.completion.size() < toy::kCompletionLen) ex.completion.push_back(toy::kPad);
  return ex;
}

bool TaskSpec::verify(std::span<const Token> prompt, std::span<const Token> completion) const {
  const auto gold = gold_answer(prompt);
  if (!gold) return false;
  const auto answer = extract_answer(completion, begin_marker, end_marker);
  return answer && *answer == *gold;
}

std::optional<std::vector<Token>> extract_answer(std::span<const Token> completion, Token begin,
                                                 Token end) {
  const auto b = std::find(completion.begin(), completion.end(), begin);
  if (b == completion.end()) return std::nullopt;
  const auto e = std::find(b + 1, completion.end(), end);
  if (e == completion.end() || e == b + 1) return std::nullopt;
  return std::vector<Token>(b + 1, e);
}

std::vector<Example> generate_corpus(const TaskSpec& task, std::size_t n, Rng& rng) {
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(task.sample_example(rng));
  return out;
}

std::vector<std::vector<Token>> generate_prompts(const TaskSpec& task, std::size_t n, Rng& rng) {
  std::vector<std::vector<Token>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(task.sample_prompt(rng));
  return out;
}

}  // namespace dultra::rewards
