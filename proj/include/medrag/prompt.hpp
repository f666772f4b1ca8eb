#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "medrag/corpus.hpp"

namespace medrag {

/// Fixed grounding instruction placed at the top of every prompt.
inline constexpr std::string_view kInstructionText =
    "Use only the provided context passages to answer. Cite sources with bracketed numbers like [1].";

inline constexpr std::size_t kDefaultMaxPromptTokens = 3072;

struct PromptContext {
  std::string marker;  // "[n]", 1-based rank
  std::string passage_id;
  std::string text;    // single-line form of the passage text
};

/// Layout of `rendered`:
///
///   <instruction>
///   <blank line>
///   [1] <passage 1>
///   ...
///   [n] <passage n>
///   <blank line>
///   Question: <question>
///   Answer:
struct Prompt {
  std::string instruction;
  std::string question;
  std::vector<PromptContext> contexts;
  std::string rendered;
};

/// Passages are taken in the given (rank) order. Newlines inside passages and
/// the question become spaces. When the rendered prompt exceeds
/// `max_prompt_tokens` whitespace tokens the lowest-ranked passages are
/// dropped; Errc::invalid_argument if not even one passage fits.
Prompt build_prompt(std::string_view question, const std::vector<Passage>& passages,
                    std::size_t max_prompt_tokens = kDefaultMaxPromptTokens);

struct CitationScan {
  std::vector<int> markers;  // in-range, deduplicated, first-occurrence order
  int dangling = 0;          // occurrences of out-of-range markers
};

/// Finds "[n]" markers (decimal digits only). Markers outside 1..k are dangling.
CitationScan extract_citations(std::string_view answer_text, int k);

}  // namespace medrag
