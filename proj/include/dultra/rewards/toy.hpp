#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dultra/core/rng.hpp"
#include "dultra/mdlm/corpus.hpp"

namespace dultra::rewards {

// Toy vocabulary shared by every task. Completions open with three style
// tokens whose values are independent of the prompt, so a decoder may commit
// to them in any order.
namespace toy {
inline constexpr Token kDigit0 = 0;    // digits 0..9
inline constexpr Token kLetter0 = 10;  // letters a..d
inline constexpr std::size_t kLetters = 4;
inline constexpr Token kStyle0 = 14;   // style slot s option o is kStyle0 + 2s + o
inline constexpr std::size_t kStyleSlots = 3;
inline constexpr Token kAdd = 20;
inline constexpr Token kSort = 21;
inline constexpr Token kCopy = 22;
inline constexpr Token kPlus = 23;
inline constexpr Token kEquals = 24;
inline constexpr Token kBoa = 25;  // begin answer
inline constexpr Token kEoa = 26;  // end answer
inline constexpr Token kPad = 27;
inline constexpr Token kMask = 28;
inline constexpr std::size_t kVocabSize = 29;
inline constexpr std::size_t kPromptLen = 5;
inline constexpr std::size_t kCompletionLen = 10;

std::string token_name(Token t);
std::string render(std::span<const Token> tokens);
}  // namespace toy

enum class TaskKind { kModularAddition, kSequenceSort, kPatternCopy };

TaskKind parse_task(const std::string& name);
std::string task_name(TaskKind kind);

/// Probability of the majority option of each style slot.
struct StyleConfig {
  std::array<double, toy::kStyleSlots> majority{0.97, 0.80, 0.65};
};

/// Completion layouts (10 tokens each):
///   modular-addition  [ADD a + b =]   -> s1 s2 s3 a + b = BOA (a+b)%10 EOA
///   sequence-sort     [SORT d1..d4]   -> s1 s2 s3 BOA sorted digits EOA PAD
///   pattern-copy      [COPY l1..l4]   -> s1 s2 s3 BOA l1..l4 EOA PAD
struct TaskSpec {
  TaskKind kind = TaskKind::kModularAddition;
  StyleConfig style{};
  Token begin_marker = toy::kBoa;
  Token end_marker = toy::kEoa;

  std::size_t prompt_len() const { return toy::kPromptLen; }
  std::size_t completion_len() const { return toy::kCompletionLen; }

  std::vector<Token> sample_prompt(Rng& rng) const;
  /// Answer payload for a prompt; nullopt when the prompt is not of this task.
  std::optional<std::vector<Token>> gold_answer(std::span<const Token> prompt) const;
  /// Samples a prompt and a gold completion with freshly drawn style tokens.
  Example sample_example(Rng& rng) const;
  /// Exact match of the marked answer against the gold answer.
  bool verify(std::span<const Token> prompt, std::span<const Token> completion) const;
};

/// Tokens strictly between the first begin marker and the first end marker
/// after it. nullopt when either marker is missing or the payload is empty.
std::optional<std::vector<Token>> extract_answer(std::span<const Token> completion, Token begin,
                                                 Token end);

std::vector<Example> generate_corpus(const TaskSpec& task, std::size_t n, Rng& rng);
std::vector<std::vector<Token>> generate_prompts(const TaskSpec& task, std::size_t n, Rng& rng);

}  // namespace dultra::rewards
