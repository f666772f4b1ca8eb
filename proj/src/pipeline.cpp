#include "medrag/pipeline.hpp"

#include <chrono>

#include "medrag/error.hpp"
#include "medrag/text.hpp"

namespace medrag {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <typename F>
auto in_stage(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e.code(), e.what());
  } catch (const std::exception& e) {
    throw StageError(stage, Errc::invalid_argument, e.what());
  }
}

bool is_marker_at(std::string_view s, std::size_t i, std::size_t& end) {
  if (s[i] != '[') return false;
  std::size_t j = i + 1;
  while (j < s.size() && s[j] >= '0' && s[j] <= '9') ++j;
  if (j == i + 1 || j >= s.size() || s[j] != ']') return false;
  end = j + 1;
  return true;
}

}  // namespace

void GroundingConfig::validate() const {
  if (!(support_threshold > 0.0 && support_threshold < 1.0)) {
    throw Error(Errc::invalid_argument, "support_threshold must lie in (0, 1)");
  }
  if (k < 1) throw Error(Errc::invalid_argument, "k must be >= 1");
  if (max_prompt_tokens < 1) throw Error(Errc::invalid_argument, "max_prompt_tokens must be >= 1");
}

std::vector<std::string> answer_sentences(std::string_view answer_text) {
  std::vector<std::string> out;
  std::string segment;
  auto flush = [&] {
    for (const auto& s : text::split_sentences(segment)) out.emplace_back(s.text);
    segment.clear();
  };
  for (std::size_t i = 0; i < answer_text.size();) {
    std::size_t end = 0;
    if (is_marker_at(answer_text, i, end)) {
      flush();
      i = end;
    } else {
      segment.push_back(answer_text[i++]);
    }
  }
  flush();
  return out;
}

GroundingReport check_grounding(std::string_view answer_text, const std::vector<Passage>& passages, double threshold,
                                const EmbedderConfig& embedder) {
  if (passages.empty()) throw Error(Errc::invalid_argument, "grounding check needs at least one passage");
  const auto sentences = answer_sentences(answer_text);
  if (sentences.empty()) throw Error(Errc::invalid_argument, "answer has no sentences");

  std::vector<std::string> flat;
  std::vector<std::string> texts;
  for (const auto& p : passages) {
    texts.push_back(p.text);
    flat.push_back(text::single_line(p.text));
  }
  std::vector<std::optional<Embedding>> passage_vecs(passages.size());
  for (std::size_t i = 0; i < passages.size(); ++i) {
    if (!text::alnum_tokens(texts[i]).empty()) passage_vecs[i] = embed::embed_text(embedder, texts[i]);
  }

  GroundingReport report;
  std::size_t unsupported = 0;
  for (const auto& sentence : sentences) {
    SentenceSupport sup;
    sup.sentence = sentence;
    std::optional<std::size_t> verbatim;
    for (std::size_t i = 0; i < passages.size() && !verbatim; ++i) {
      if (texts[i].find(sentence) != std::string::npos || flat[i].find(sentence) != std::string::npos) verbatim = i;
    }
    std::optional<Embedding> sv;
    if (!text::alnum_tokens(sentence).empty()) sv = embed::embed_text(embedder, sentence);

    if (verbatim) {
      sup.best_passage_id = passages[*verbatim].passage_id;
      if (sv && passage_vecs[*verbatim]) sup.best_score = embed::similarity(*sv, *passage_vecs[*verbatim]);
      sup.supported = true;
    } else if (sv) {
      double best = -2.0;
      for (std::size_t i = 0; i < passages.size(); ++i) {
        if (!passage_vecs[i]) continue;
        const double s = embed::similarity(*sv, *passage_vecs[i]);
        if (s > best) {
          best = s;
          sup.best_passage_id = passages[i].passage_id;
        }
      }
      sup.best_score = best < -1.5 ? 0.0 : best;
      sup.supported = sup.best_score >= threshold;
    }
    if (!sup.supported) ++unsupported;
    report.sentences.push_back(std::move(sup));
  }
  report.unsupported_rate = static_cast<double>(unsupported) / static_cast<double>(sentences.size());
  return report;
}

std::vector<ScoredPassage> retrieve_for_question(std::string_view question, const EmbedderConfig& embedder,
                                                 const VectorIndex& index, const PassageStore& store, int k) {
  const Embedding q = in_stage("embed", [&] { return embed::embed_text(embedder, question); });
  return in_stage("retrieve", [&] {
    const auto result = index.search(q, k);
    std::vector<ScoredPassage> out;
    out.reserve(result.hits.size());
    for (const auto& h : result.hits) out.push_back({store.at(h.passage_id), h.score});
    return out;
  });
}

Pipeline::Pipeline(PipelineConfig cfg, std::shared_ptr<const VectorIndex> index,
                   std::shared_ptr<const PassageStore> store)
    : cfg_(std::move(cfg)), index_(std::move(index)), store_(std::move(store)) {
  if (!index_ || !store_) throw Error(Errc::invalid_argument, "pipeline needs an index and a passage store");
  cfg_.embedder.validate();
  cfg_.generator.validate();
  cfg_.grounding.validate();
}

std::vector<ScoredPassage> Pipeline::retrieve(std::string_view question, std::optional<int> k) const {
  return retrieve_for_question(question, cfg_.embedder, *index_, *store_, k.value_or(cfg_.grounding.k));
}

GroundedAnswer Pipeline::answer(std::string_view question, std::optional<int> k) const {
  const auto t_start = Clock::now();
  GroundedAnswer out;

  auto t0 = Clock::now();
  const Embedding q = in_stage("embed", [&] { return embed::embed_text(cfg_.embedder, question); });
  out.latency.embed_ms = ms_since(t0);

  t0 = Clock::now();
  out.retrieved = in_stage("retrieve", [&] {
    const auto result = index_->search(q, k.value_or(cfg_.grounding.k));
    std::vector<ScoredPassage> hits;
    for (const auto& h : result.hits) hits.push_back({store_->at(h.passage_id), h.score});
    return hits;
  });
  out.latency.retrieve_ms = ms_since(t0);

  out.prompt = in_stage("prompt", [&] {
    std::vector<Passage> ps;
    for (const auto& sp : out.retrieved) ps.push_back(sp.passage);
    return build_prompt(question, ps, cfg_.grounding.max_prompt_tokens);
  });
  // Passages dropped for the prompt budget are not part of the answer context.
  out.retrieved.resize(out.prompt.contexts.size());

  t0 = Clock::now();
  const RawAnswer raw = in_stage("generate", [&] { return generate(cfg_.generator, out.prompt); });
  out.latency.generate_ms = ms_since(t0);
  out.answer_text = raw.text;
  out.backend = raw.backend;

  const auto scan = extract_citations(out.answer_text, static_cast<int>(out.prompt.contexts.size()));
  out.citations = scan.markers;
  out.dangling_citations = scan.dangling;
  out.attribution_present = !scan.markers.empty();

  const auto report = in_stage("grounding", [&] {
    std::vector<Passage> ps;
    for (const auto& sp : out.retrieved) ps.push_back(sp.passage);
    const EmbedderConfig reference{EmbedderKind::reference_hash, kReferenceDims, {}, 10000};
    return check_grounding(out.answer_text, ps, cfg_.grounding.support_threshold, reference);
  });
  out.sentence_support = report.sentences;
  out.unsupported_rate = report.unsupported_rate;
  out.latency.total_ms = ms_since(t_start);
  return out;
}

}  // namespace medrag
