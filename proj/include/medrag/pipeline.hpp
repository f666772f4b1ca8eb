#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "medrag/corpus.hpp"
#include "medrag/embed.hpp"
#include "medrag/generate.hpp"
#include "medrag/prompt.hpp"
#include "medrag/vindex.hpp"

namespace medrag {

struct GroundingConfig {
  double support_threshold = 0.40;
  int k = 5;
  std::size_t max_prompt_tokens = kDefaultMaxPromptTokens;

  void validate() const;
};

struct ScoredPassage {
  Passage passage;
  double score = 0.0;
};

struct SentenceSupport {
  std::string sentence;
  double best_score = 0.0;
  bool supported = false;
  std::string best_passage_id;
};

struct GroundingReport {
  std::vector<SentenceSupport> sentences;
  double unsupported_rate = 0.0;
};

struct LatencyBreakdown {
  double embed_ms = 0.0;
  double retrieve_ms = 0.0;
  double generate_ms = 0.0;
  double total_ms = 0.0;
};

struct GroundedAnswer {
  std::string answer_text;
  std::vector<int> citations;
  int dangling_citations = 0;
  std::vector<SentenceSupport> sentence_support;
  double unsupported_rate = 0.0;
  bool attribution_present = false;
  LatencyBreakdown latency;
  std::vector<ScoredPassage> retrieved;
  Prompt prompt;
  std::string backend;
};

/// Sentences of an answer with citation markers removed. A marker ends the
/// sentence it follows; otherwise sentences split after [.!?] + whitespace.
std::vector<std::string> answer_sentences(std::string_view answer_text);

/// A sentence is supported when it occurs verbatim in some passage or its
/// best similarity to a passage reaches `threshold`. Errc::invalid_argument
/// on an answer without sentences or an empty passage list.
GroundingReport check_grounding(std::string_view answer_text, const std::vector<Passage>& passages, double threshold,
                                const EmbedderConfig& embedder);

/// Top-min(k, index size) passages by inner product.
std::vector<ScoredPassage> retrieve_for_question(std::string_view question, const EmbedderConfig& embedder,
                                                 const VectorIndex& index, const PassageStore& store, int k);

struct PipelineConfig {
  EmbedderConfig embedder;
  GeneratorConfig generator;
  GroundingConfig grounding;
};

/// retrieve -> build_prompt -> generate -> extract_citations -> check_grounding.
/// Stateless per call; the index and passage store are shared read-only.
class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, std::shared_ptr<const VectorIndex> index, std::shared_ptr<const PassageStore> store);

  const PipelineConfig& config() const noexcept { return cfg_; }
  const VectorIndex& index() const noexcept { return *index_; }
  const PassageStore& store() const noexcept { return *store_; }

  /// Errors are StageError labeled "embed" or "retrieve".
  std::vector<ScoredPassage> retrieve(std::string_view question, std::optional<int> k = std::nullopt) const;

  /// Errors are StageError labeled with the failing stage.
  GroundedAnswer answer(std::string_view question, std::optional<int> k = std::nullopt) const;

 private:
  PipelineConfig cfg_;
  std::shared_ptr<const VectorIndex> index_;
  std::shared_ptr<const PassageStore> store_;
};

}  // namespace medrag
