#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace medrag {

/// A source document (abstract, guideline, FAQ entry).
struct Document {
  std::string doc_id;
  std::string title;
  std::string body;
  std::string source;
  std::optional<int> year;

  bool operator==(const Document&) const = default;
};

/// A retrievable window of a document body.
struct Passage {
  std::string passage_id;  // doc_id + "#" + ordinal
  std::string doc_id;
  std::string text;        // == body.substr(char_span.first, char_span.second - char_span.first)
  std::pair<std::size_t, std::size_t> char_span;

  bool operator==(const Passage&) const = default;
};

struct ChunkOptions {
  int max_tokens = 128;
  int overlap_tokens = 32;
};

namespace corpus {

/// Reads newline-delimited JSON documents. Blank lines are skipped; any other
/// malformed line raises Errc::parse naming the 1-based line number.
std::vector<Document> load_corpus(const std::filesystem::path& path);
void save_corpus(const std::filesystem::path& path, const std::vector<Document>& docs);

/// Fixed-stride word windows over `doc.body`; stride = max_tokens - overlap_tokens.
std::vector<Passage> chunk(const Document& doc, int max_tokens, int overlap_tokens);
inline std::vector<Passage> chunk(const Document& doc, const ChunkOptions& opts = {}) {
  return chunk(doc, opts.max_tokens, opts.overlap_tokens);
}

/// Chunks every document, preserving document order.
std::vector<Passage> chunk_all(const std::vector<Document>& docs, const ChunkOptions& opts = {});

std::string make_passage_id(std::string_view doc_id, std::size_t ordinal);

/// Inverse of make_passage_id; splits on the last '#'.
std::optional<std::pair<std::string, std::size_t>> parse_passage_id(std::string_view passage_id);

}  // namespace corpus
}  // namespace medrag

namespace medrag {

/// Passage lookup by id. Persisted next to an index as newline-delimited JSON
/// (`passage_id`, `doc_id`, `text`, `start`, `end`).
class PassageStore {
 public:
  PassageStore() = default;
  explicit PassageStore(std::vector<Passage> passages);

  void add(Passage p);
  const Passage* find(std::string_view passage_id) const;
  const Passage& at(std::string_view passage_id) const;
  std::size_t size() const noexcept { return passages_.size(); }
  const std::vector<Passage>& passages() const noexcept { return passages_; }

  void save(const std::filesystem::path& path) const;
  static PassageStore load(const std::filesystem::path& path);

  /// Sidecar location used by the CLI and service: "<index>.passages.jsonl".
  static std::filesystem::path sidecar_for(const std::filesystem::path& index_path);

 private:
  std::vector<Passage> passages_;
  std::unordered_map<std::string, std::size_t> rows_;
};

}  // namespace medrag
