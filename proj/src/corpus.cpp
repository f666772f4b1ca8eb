#include "medrag/corpus.hpp"

#include <charconv>
#include <fstream>
#include <unordered_set>

#include "json.hpp"
#include "medrag/error.hpp"
#include "medrag/text.hpp"

namespace medrag::corpus {

using nlohmann::json;

namespace {

Document parse_document(const std::string& line, std::size_t lineno) {
  auto fail = [&](const std::string& why) -> Error {
    return Error(Errc::parse, "corpus line " + std::to_string(lineno) + ": " + why);
  };
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw fail(std::string("invalid JSON (") + e.what() + ")");
  }
  if (!j.is_object()) throw fail("record is not a JSON object");

  auto required_string = [&](const char* key) {
    auto it = j.find(key);
    if (it == j.end()) throw fail(std::string("missing \"") + key + "\"");
    if (!it->is_string()) throw fail(std::string("\"") + key + "\" must be a string");
    return it->get<std::string>();
  };

  Document doc;
  doc.doc_id = required_string("doc_id");
  doc.title = required_string("title");
  doc.body = required_string("body");
  doc.source = required_string("source");
  if (auto it = j.find("year"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw fail("\"year\" must be an integer");
    doc.year = it->get<int>();
  }
  if (doc.doc_id.empty()) throw fail("\"doc_id\" is empty");
  if (text::trim(doc.body).empty()) throw fail("\"body\" is empty");
  return doc;
}

}  // namespace

std::vector<Document> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open corpus file " + path.string());

  std::vector<Document> docs;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    Document doc = parse_document(line, lineno);
    if (!seen.insert(doc.doc_id).second) {
      throw Error(Errc::duplicate,
                  "corpus line " + std::to_string(lineno) + ": duplicate doc_id \"" + doc.doc_id + "\"");
    }
    docs.push_back(std::move(doc));
  }
  if (docs.empty()) throw Error(Errc::parse, "corpus file " + path.string() + " has no records");
  return docs;
}

void save_corpus(const std::filesystem::path& path, const std::vector<Document>& docs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write corpus file " + path.string());
  for (const auto& d : docs) {
    json j = {{"doc_id", d.doc_id}, {"title", d.title}, {"body", d.body}, {"source", d.source}};
    if (d.year) j["year"] = *d.year;
    out << j.dump() << '\n';
  }
}

std::string make_passage_id(std::string_view doc_id, std::size_t ordinal) {
  std::string id(doc_id);
  id.push_back('#');
  id += std::to_string(ordinal);
  return id;
}

std::optional<std::pair<std::string, std::size_t>> parse_passage_id(std::string_view passage_id) {
  auto hash = passage_id.rfind('#');
  if (hash == std::string_view::npos || hash == 0 || hash + 1 == passage_id.size()) return std::nullopt;
  auto digits = passage_id.substr(hash + 1);
  std::size_t ordinal = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), ordinal);
  if (ec != std::errc{} || ptr != digits.data() + digits.size()) return std::nullopt;
  // Reject non-canonical forms such as "007" so the mapping stays a bijection.
  if (digits.size() > 1 && digits.front() == '0') return std::nullopt;
  return std::make_pair(std::string(passage_id.substr(0, hash)), ordinal);
}

std::vector<Passage> chunk(const Document& doc, int max_tokens, int overlap_tokens) {
  if (max_tokens < 16) throw Error(Errc::invalid_argument, "max_tokens must be >= 16");
  if (overlap_tokens < 0 || overlap_tokens >= max_tokens) {
    throw Error(Errc::invalid_argument, "overlap_tokens must satisfy 0 <= overlap < max_tokens");
  }
  const auto spans = text::word_spans(doc.body);
  if (spans.empty()) throw Error(Errc::invalid_argument, "document \"" + doc.doc_id + "\" has an empty body");

  const std::size_t n = spans.size();
  const auto window = static_cast<std::size_t>(max_tokens);
  const auto stride = static_cast<std::size_t>(max_tokens - overlap_tokens);

  std::vector<Passage> out;
  for (std::size_t start = 0;; start += stride) {
    const std::size_t end = std::min(start + window, n);
    const std::size_t b = spans[start].begin;
    const std::size_t e = spans[end - 1].end;
    out.push_back(Passage{make_passage_id(doc.doc_id, out.size()), doc.doc_id, doc.body.substr(b, e - b), {b, e}});
    if (end == n) break;
  }
  return out;
}

std::vector<Passage> chunk_all(const std::vector<Document>& docs, const ChunkOptions& opts) {
  std::vector<Passage> out;
  for (const auto& d : docs) {
    auto ps = chunk(d, opts);
    out.insert(out.end(), std::make_move_iterator(ps.begin()), std::make_move_iterator(ps.end()));
  }
  return out;
}

}  // namespace medrag::corpus

namespace medrag {

using nlohmann::json;

PassageStore::PassageStore(std::vector<Passage> passages) {
  for (auto& p : passages) add(std::move(p));
}

void PassageStore::add(Passage p) {
  if (rows_.count(p.passage_id)) throw Error(Errc::duplicate, "passage_id \"" + p.passage_id + "\" already stored");
  rows_.emplace(p.passage_id, passages_.size());
  passages_.push_back(std::move(p));
}

const Passage* PassageStore::find(std::string_view passage_id) const {
  auto it = rows_.find(std::string(passage_id));
  return it == rows_.end() ? nullptr : &passages_[it->second];
}

const Passage& PassageStore::at(std::string_view passage_id) const {
  if (const Passage* p = find(passage_id)) return *p;
  throw Error(Errc::not_found, "passage \"" + std::string(passage_id) + "\" not in passage store");
}

void PassageStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write passage file " + path.string());
  for (const auto& p : passages_) {
    json j = {{"passage_id", p.passage_id}, {"doc_id", p.doc_id}, {"text", p.text},
              {"start", p.char_span.first}, {"end", p.char_span.second}};
    out << j.dump() << '\n';
  }
}

PassageStore PassageStore::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open passage file " + path.string());
  PassageStore store;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      store.add(Passage{j.at("passage_id").get<std::string>(), j.at("doc_id").get<std::string>(),
                        j.at("text").get<std::string>(),
                        {j.at("start").get<std::size_t>(), j.at("end").get<std::size_t>()}});
    } catch (const json::exception& e) {
      throw Error(Errc::parse, "passage file line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return store;
}

std::filesystem::path PassageStore::sidecar_for(const std::filesystem::path& index_path) {
  return std::filesystem::path(index_path.string() + ".passages.jsonl");
}

}  // namespace medrag
