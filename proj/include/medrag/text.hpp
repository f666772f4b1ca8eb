#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace medrag::text {

/// Whitespace-delimited words (the project's "token" unit for budgets).
std::vector<std::string_view> words(std::string_view s);
std::size_t word_count(std::string_view s);

/// Byte offsets [begin, end) of every whitespace-delimited word.
struct WordSpan {
  std::size_t begin;
  std::size_t end;
};
std::vector<WordSpan> word_spans(std::string_view s);

/// Lowercased maximal runs of [a-z0-9] (ASCII only).
std::vector<std::string> alnum_tokens(std::string_view s);

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);

/// Replaces CR/LF (and tabs) with single spaces so the text stays on one line.
std::string single_line(std::string_view s);

/// Sentence pieces: split after [.!?] when followed by whitespace or end of
/// text. Pieces are trimmed and never empty. Each piece is a substring of `s`.
struct Sentence {
  std::string_view text;
  std::size_t offset;
};
std::vector<Sentence> split_sentences(std::string_view s);

/// Keeps only the first `max_words` whitespace tokens, re-joined by one space.
/// Returns the input unchanged when it already fits.
std::string truncate_words(std::string_view s, std::size_t max_words);

}  // namespace medrag::text
