#include "doctest.h"
#include "medrag/corpus.hpp"
#include "medrag/error.hpp"
#include "medrag/text.hpp"
#include "support/synthetic.hpp"
#include "support/tempdir.hpp"

using namespace medrag;
using medrag::testing::TempDir;
using medrag::testing::write_file;

namespace {

Document doc_with_words(int n, const std::string& id = "d") {
  std::string body;
  for (int i = 0; i < n; ++i) body += (i ? " w" : "w") + std::to_string(i);
  return {id, "t", body, "s", std::nullopt};
}

std::vector<std::string> as_strings(std::string_view s) {
  std::vector<std::string> out;
  for (auto w : text::words(s)) out.emplace_back(w);
  return out;
}

}  // namespace

TEST_CASE("sentence splitting follows terminal punctuation plus whitespace") {
  const auto s = text::split_sentences("First one. Second? v1.2 stays! Last without stop");
  REQUIRE(s.size() == 4);
  CHECK(s[0].text == "First one.");
  CHECK(s[1].text == "Second?");
  CHECK(s[2].text == "v1.2 stays!");
  CHECK(s[3].text == "Last without stop");
  CHECK(text::split_sentences("   ").empty());
}

TEST_CASE("alnum tokens are lowercased maximal [a-z0-9] runs") {
  CHECK(text::alnum_tokens("Aspirin-81mg, DOSE!") == std::vector<std::string>{"aspirin", "81mg", "dose"});
  CHECK(text::alnum_tokens("???").empty());
}

TEST_CASE("load_corpus reads records in file order") {
  TempDir dir;
  write_file(dir / "c.jsonl",
             R"({"doc_id":"a","title":"A","body":"alpha body","source":"pubmed","year":2020})"
             "\n\n"
             R"({"doc_id":"b","title":"B","body":"beta body","source":"faq"})"
             "\n");
  const auto docs = corpus::load_corpus(dir / "c.jsonl");
  REQUIRE(docs.size() == 2);
  CHECK(docs[0].doc_id == "a");
  CHECK(docs[0].year == 2020);
  CHECK(docs[1].doc_id == "b");
  CHECK_FALSE(docs[1].year.has_value());
}

TEST_CASE("load_corpus errors name the offending line") {
  TempDir dir;
  SUBCASE("missing body") {
    write_file(dir / "c.jsonl",
               R"({"doc_id":"a","title":"A","body":"x","source":"s"})"
               "\n"
               R"({"doc_id":"b","title":"B","source":"s"})"
               "\n");
    try {
      corpus::load_corpus(dir / "c.jsonl");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::parse);
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
      CHECK(std::string(e.what()).find("body") != std::string::npos);
    }
  }
  SUBCASE("duplicate doc_id") {
    write_file(dir / "c.jsonl",
               R"({"doc_id":"a","title":"A","body":"x","source":"s"})"
               "\n"
               R"({"doc_id":"a","title":"B","body":"y","source":"s"})"
               "\n");
    try {
      corpus::load_corpus(dir / "c.jsonl");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::duplicate);
    }
  }
  SUBCASE("empty file") {
    write_file(dir / "c.jsonl", "\n");
    CHECK_THROWS_AS(corpus::load_corpus(dir / "c.jsonl"), Error);
  }
  SUBCASE("whitespace-only body") {
    write_file(dir / "c.jsonl", R"({"doc_id":"a","title":"A","body":"   ","source":"s"})");
    CHECK_THROWS_AS(corpus::load_corpus(dir / "c.jsonl"), Error);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(corpus::load_corpus(dir / "nope.jsonl"), Error); }
}

TEST_CASE("100 synthetic abstracts load with unique ids") {
  TempDir dir;
  medrag::testing::Synth synth(7);
  const auto docs = synth.documents(100);
  corpus::save_corpus(dir / "c.jsonl", docs);
  const auto loaded = corpus::load_corpus(dir / "c.jsonl");
  CHECK(loaded.size() == 100);
  CHECK(loaded == docs);
}

TEST_CASE("chunk: short body fits in one passage") {
  const Document d = doc_with_words(10);
  const auto ps = corpus::chunk(d, 16, 0);
  REQUIRE(ps.size() == 1);
  CHECK(ps[0].text == d.body);
  CHECK(ps[0].passage_id == "d#0");
  CHECK(ps[0].char_span == std::pair<std::size_t, std::size_t>{0, d.body.size()});
}

TEST_CASE("chunk: 100 words, window 40, overlap 10 -> starts 0, 30, 60") {
  const Document d = doc_with_words(100);
  const auto ps = corpus::chunk(d, 40, 10);
  REQUIRE(ps.size() == 3);
  const int starts[] = {0, 30, 60};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto w = as_strings(ps[i].text);
    CHECK(w.size() == 40);
    CHECK(w.front() == "w" + std::to_string(starts[i]));
    CHECK(ps[i].passage_id == "d#" + std::to_string(i));
  }
}

TEST_CASE("chunk: argument and body errors") {
  CHECK_THROWS_AS(corpus::chunk(Document{"d", "", " \n ", "", {}}, 16, 0), Error);
  CHECK_THROWS_AS(corpus::chunk(doc_with_words(5), 15, 0), Error);
  CHECK_THROWS_AS(corpus::chunk(doc_with_words(5), 16, 16), Error);
  CHECK_THROWS_AS(corpus::chunk(doc_with_words(5), 16, -1), Error);
}

TEST_CASE("chunk properties over random documents") {
  medrag::testing::Synth synth(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int max_tokens = synth.uniform(16, 80);
    const int overlap = synth.uniform(0, max_tokens - 1);
    Document d{"doc-" + std::to_string(trial), "", synth.body(1, 25), "", {}};
    if (trial % 5 == 0) d.body = "\n  " + d.body + "\t\n";  // surrounding whitespace
    const auto ps = corpus::chunk(d, max_tokens, overlap);

    std::vector<std::string> rebuilt;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const auto& p = ps[i];
      // span/text agreement and bounds
      REQUIRE(p.char_span.second <= d.body.size());
      CHECK(d.body.substr(p.char_span.first, p.char_span.second - p.char_span.first) == p.text);
      CHECK(text::word_count(p.text) <= static_cast<std::size_t>(max_tokens));
      auto parsed = corpus::parse_passage_id(p.passage_id);
      REQUIRE(parsed);
      CHECK(parsed->first == d.doc_id);
      CHECK(parsed->second == i);
      auto w = as_strings(p.text);
      rebuilt.insert(rebuilt.end(), w.begin() + (i == 0 ? 0 : overlap), w.end());
    }
    CHECK(rebuilt == as_strings(d.body));
    CHECK(corpus::chunk(d, max_tokens, overlap) == ps);
  }
}

TEST_CASE("passage ids round-trip, including ids that contain '#'") {
  for (const std::string doc : {"a", "pmid:123", "x#y", "#lead"}) {
    for (std::size_t ord : {0u, 7u, 12345u}) {
      const auto id = corpus::make_passage_id(doc, ord);
      const auto parsed = corpus::parse_passage_id(id);
      REQUIRE(parsed);
      CHECK(parsed->first == doc);
      CHECK(parsed->second == ord);
    }
  }
  CHECK_FALSE(corpus::parse_passage_id("nohash"));
  CHECK_FALSE(corpus::parse_passage_id("a#"));
  CHECK_FALSE(corpus::parse_passage_id("a#01"));
  CHECK_FALSE(corpus::parse_passage_id("a#1x"));
}

TEST_CASE("passage store persists as a sidecar") {
  TempDir dir;
  medrag::testing::Synth synth(3);
  const auto ps = corpus::chunk_all(synth.documents(5), {32, 8});
  PassageStore store(ps);
  store.save(dir / "p.jsonl");
  const auto back = PassageStore::load(dir / "p.jsonl");
  CHECK(back.passages() == ps);
  CHECK(back.at(ps[2].passage_id) == ps[2]);
  CHECK(back.find("missing#0") == nullptr);
  CHECK_THROWS_AS(back.at("missing#0"), Error);
  CHECK(PassageStore::sidecar_for("x/idx.bin") == std::filesystem::path("x/idx.bin.passages.jsonl"));
}
