#include "medrag/generate.hpp"

#include <algorithm>
#include <chrono>

#include "http_client.hpp"
#include "medrag/embed.hpp"
#include "medrag/error.hpp"
#include "medrag/text.hpp"

namespace medrag {

GeneratorKind parse_generator_kind(std::string_view name) {
  if (name == "stub" || name == "extractive-stub") return GeneratorKind::extractive_stub;
  if (name == "remote") return GeneratorKind::remote;
  throw Error(Errc::invalid_argument, "unknown generator backend \"" + std::string(name) + "\"");
}

const char* to_string(GeneratorKind kind) noexcept {
  return kind == GeneratorKind::remote ? "remote" : "extractive-stub";
}

void GeneratorConfig::validate() const {
  if (max_answer_tokens < 1) throw Error(Errc::invalid_argument, "max_answer_tokens must be >= 1");
  if (timeout_ms <= 0) throw Error(Errc::invalid_argument, "generator timeout_ms must be positive");
  if (kind == GeneratorKind::remote && endpoint.empty()) {
    throw Error(Errc::invalid_argument, "remote generator requires an endpoint");
  }
  if (kind != GeneratorKind::remote && !endpoint.empty()) {
    throw Error(Errc::invalid_argument, "endpoint is only valid for the remote generator");
  }
}

std::vector<SelectedSentence> stub_select_sentences(std::string_view question, const std::vector<std::string>& passages,
                                                    std::size_t budget_tokens) {
  if (passages.empty()) throw Error(Errc::invalid_argument, "stub needs at least one passage");
  const Embedding q = embed::reference_embed(question, kReferenceDims);

  std::vector<SelectedSentence> pool;
  for (std::size_t p = 0; p < passages.size(); ++p) {
    const auto sentences = text::split_sentences(passages[p]);
    for (std::size_t s = 0; s < sentences.size(); ++s) {
      double score = 0.0;
      if (!text::alnum_tokens(sentences[s].text).empty()) {
        score = embed::similarity(q, embed::reference_embed(sentences[s].text, kReferenceDims));
      }
      pool.push_back({std::string(sentences[s].text), p, s, score});
    }
  }
  if (pool.empty()) throw Error(Errc::invalid_argument, "no sentences extractable from passages");

  std::stable_sort(pool.begin(), pool.end(), [](const SelectedSentence& a, const SelectedSentence& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.passage_ordinal != b.passage_ordinal) return a.passage_ordinal < b.passage_ordinal;
    return a.position < b.position;
  });

  std::vector<SelectedSentence> picked;
  std::size_t used = 0;
  for (auto& s : pool) {
    const std::size_t cost = text::word_count(s.sentence) + 1;
    if (used + cost > budget_tokens) continue;
    used += cost;
    picked.push_back(std::move(s));
  }
  if (picked.empty()) {
    throw Error(Errc::invalid_argument,
                "token budget " + std::to_string(budget_tokens) + " is smaller than every candidate sentence");
  }
  return picked;
}

std::string render_stub_answer(const std::vector<SelectedSentence>& selection) {
  std::string out;
  for (const auto& s : selection) {
    if (!out.empty()) out.push_back(' ');
    out += s.sentence;
    out += " [" + std::to_string(s.passage_ordinal + 1) + "]";
  }
  return out;
}

RawAnswer generate(const GeneratorConfig& cfg, const Prompt& prompt) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  RawAnswer out;
  out.backend = to_string(cfg.kind);

  if (cfg.kind == GeneratorKind::extractive_stub) {
    std::vector<std::string> texts;
    texts.reserve(prompt.contexts.size());
    for (const auto& c : prompt.contexts) texts.push_back(c.text);
    out.text = render_stub_answer(
        stub_select_sentences(prompt.question, texts, static_cast<std::size_t>(cfg.max_answer_tokens)));
  } else {
    const nlohmann::json req = {
        {"prompt", prompt.rendered}, {"max_tokens", cfg.max_answer_tokens}, {"temperature", cfg.temperature}};
    const nlohmann::json res = detail::post_json(cfg.endpoint, req, cfg.timeout_ms);
    auto it = res.find("text");
    if (it == res.end() || !it->is_string()) throw Error(Errc::transport, "generator response lacks \"text\"");
    out.text = it->get<std::string>();
  }

  out.text = text::truncate_words(text::trim(out.text), static_cast<std::size_t>(cfg.max_answer_tokens));
  if (out.text.empty()) throw Error(Errc::empty_completion, "generator returned an empty completion");
  out.gen_latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started)
                           .count();
  return out;
}

}  // namespace medrag
