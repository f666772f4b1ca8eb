#pragma once

// In-memory index + passage store over a document set.

#include <memory>
#include <string>
#include <vector>

#include "medrag/corpus.hpp"
#include "medrag/embed.hpp"
#include "medrag/vindex.hpp"

namespace medrag::testing {

struct Fixture {
  std::shared_ptr<const VectorIndex> index;
  std::shared_ptr<const PassageStore> store;
  std::vector<Passage> passages;
};

inline Fixture build_fixture(const std::vector<Passage>& passages, const EmbedderConfig& ecfg = {}) {
  auto index = std::make_shared<VectorIndex>(ecfg.dims);
  for (const auto& p : passages) index->add(p.passage_id, embed::embed_text(ecfg, p.text));
  return {index, std::make_shared<const PassageStore>(passages), passages};
}

inline Fixture build_fixture(const std::vector<Document>& docs, const ChunkOptions& opts = {},
                             const EmbedderConfig& ecfg = {}) {
  return build_fixture(corpus::chunk_all(docs, opts), ecfg);
}

inline Passage make_passage(const std::string& id, const std::string& text) {
  return Passage{id, id.substr(0, id.rfind('#')), text, {0, text.size()}};
}

}  // namespace medrag::testing
