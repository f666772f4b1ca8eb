#include "medrag/prompt.hpp"

#include <algorithm>

#include "medrag/error.hpp"
#include "medrag/text.hpp"

namespace medrag {

namespace {

std::string render(const Prompt& p) {
  std::string out = p.instruction;
  out += "\n\n";
  for (const auto& c : p.contexts) {
    out += c.marker;
    out += ' ';
    out += c.text;
    out += '\n';
  }
  out += "\nQuestion: ";
  out += p.question;
  out += "\nAnswer:";
  return out;
}

}  // namespace

Prompt build_prompt(std::string_view question, const std::vector<Passage>& passages, std::size_t max_prompt_tokens) {
  if (passages.empty()) throw Error(Errc::invalid_argument, "prompt needs at least one passage");
  Prompt p;
  p.instruction = std::string(kInstructionText);
  p.question = text::single_line(question);
  for (std::size_t i = 0; i < passages.size(); ++i) {
    p.contexts.push_back({"[" + std::to_string(i + 1) + "]", passages[i].passage_id, text::single_line(passages[i].text)});
  }
  p.rendered = render(p);
  while (text::word_count(p.rendered) > max_prompt_tokens) {
    if (p.contexts.size() == 1) {
      throw Error(Errc::invalid_argument,
                  "prompt exceeds " + std::to_string(max_prompt_tokens) + " tokens even with a single passage");
    }
    p.contexts.pop_back();
    p.rendered = render(p);
  }
  return p;
}

CitationScan extract_citations(std::string_view answer_text, int k) {
  CitationScan scan;
  std::size_t i = 0;
  while ((i = answer_text.find('[', i)) != std::string_view::npos) {
    std::size_t j = i + 1;
    while (j < answer_text.size() && answer_text[j] >= '0' && answer_text[j] <= '9') ++j;
    if (j == i + 1 || j >= answer_text.size() || answer_text[j] != ']') {
      ++i;
      continue;
    }
    const auto digits = answer_text.substr(i + 1, j - i - 1);
    long long n = -1;
    if (digits.size() <= 9) n = std::stoll(std::string(digits));
    if (n >= 1 && n <= k) {
      const int marker = static_cast<int>(n);
      if (std::find(scan.markers.begin(), scan.markers.end(), marker) == scan.markers.end()) {
        scan.markers.push_back(marker);
      }
    } else {
      ++scan.dangling;
    }
    i = j + 1;
  }
  return scan;
}

}  // namespace medrag
