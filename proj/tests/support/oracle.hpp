#pragma once

// Brute-force full-scan top-k: score every entry, sort everything, cut.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "medrag/vindex.hpp"

namespace medrag::testing {

inline std::vector<Hit> brute_force_topk(const VectorIndex& index, const Embedding& q, int k) {
  std::vector<Hit> all;
  for (std::size_t r = 0; r < index.size(); ++r) {
    const auto v = index.vector(r);
    double s = 0.0;
    for (Eigen::Index d = 0; d < v.size(); ++d) s += static_cast<double>(v[d]) * static_cast<double>(q[d]);
    all.push_back({index.id(r), s});
  }
  std::sort(all.begin(), all.end(), [](const Hit& a, const Hit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.passage_id < b.passage_id;
  });
  if (all.size() > static_cast<std::size_t>(k)) all.resize(static_cast<std::size_t>(k));
  return all;
}

// Sparse re-derivation of the reference embedder's similarity: signed hashed
// token counts in a map, cosine computed directly.
inline std::map<std::uint64_t, double> oracle_bag(const std::string& text, std::uint64_t dims) {
  std::map<std::uint64_t, double> bag;
  std::string tok;
  auto flush = [&] {
    if (tok.empty()) return;
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tok) h = (h ^ c) * 0x100000001b3ULL;
    bag[h % dims] += (h >> 63) ? -1.0 : 1.0;
    tok.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c)) tok.push_back(static_cast<char>(std::tolower(c)));
    else flush();
  }
  flush();
  return bag;
}

inline double oracle_similarity(const std::string& a, const std::string& b, std::uint64_t dims = 256) {
  const auto x = oracle_bag(a, dims);
  const auto y = oracle_bag(b, dims);
  double dot = 0, nx = 0, ny = 0;
  for (const auto& [k, v] : x) {
    nx += v * v;
    if (auto it = y.find(k); it != y.end()) dot += v * it->second;
  }
  for (const auto& [k, v] : y) ny += v * v;
  return dot / std::sqrt(nx * ny);
}

}  // namespace medrag::testing
