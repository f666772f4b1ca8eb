#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "medrag/prompt.hpp"

namespace medrag {

enum class GeneratorKind { remote, extractive_stub };

GeneratorKind parse_generator_kind(std::string_view name);
const char* to_string(GeneratorKind kind) noexcept;

struct GeneratorConfig {
  GeneratorKind kind = GeneratorKind::extractive_stub;
  std::string endpoint;  // remote only
  int max_answer_tokens = 256;
  int timeout_ms = 30000;
  double temperature = 0.0;

  void validate() const;
};

struct RawAnswer {
  std::string text;
  std::string backend;
  std::int64_t gen_latency_ms = 0;
};

/// One sentence chosen by the extractive stub.
struct SelectedSentence {
  std::string sentence;         // verbatim substring of its passage
  std::size_t passage_ordinal;  // 0-based rank of the source passage
  std::size_t position;         // sentence index within the passage
  double score;                 // reference-embedder similarity to the question
};

/// Dimensionality of the reference embedder used by the stub and by the
/// grounding check.
inline constexpr int kReferenceDims = 256;

/// Ranks every sentence of every passage by reference-embedder similarity to
/// the question (ties: passage ordinal, then position) and takes each in turn
/// if it still fits. A sentence costs its word count plus one for its
/// citation marker. Errc::invalid_argument when nothing fits.
std::vector<SelectedSentence> stub_select_sentences(std::string_view question, const std::vector<std::string>& passages,
                                                    std::size_t budget_tokens);

/// "sentence [n] sentence [m] ..." with n = passage_ordinal + 1.
std::string render_stub_answer(const std::vector<SelectedSentence>& selection);

/// Runs the configured backend. Output never exceeds max_answer_tokens
/// whitespace tokens. Remote failures surface as Errc::timeout,
/// Errc::transport or Errc::empty_completion.
RawAnswer generate(const GeneratorConfig& cfg, const Prompt& prompt);

}  // namespace medrag
