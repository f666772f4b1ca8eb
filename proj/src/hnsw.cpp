#include "medrag/hnsw.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

#include "medrag/error.hpp"
#include "medrag/vindex.hpp"

namespace medrag {

namespace {

const float* row_of(const float* data, int dims, std::uint32_t node) {
  return data + static_cast<std::size_t>(node) * static_cast<std::size_t>(dims);
}

struct Closer {
  bool operator()(const std::pair<double, std::uint32_t>& a, const std::pair<double, std::uint32_t>& b) const {
    return a.first < b.first;  // max-heap on score
  }
};
struct Farther {
  bool operator()(const std::pair<double, std::uint32_t>& a, const std::pair<double, std::uint32_t>& b) const {
    return a.first > b.first;  // min-heap on score
  }
};

}  // namespace

HnswGraph::HnswGraph(const HnswParams& params)
    : params_(params), level_mult_(1.0 / std::log(static_cast<double>(std::max(params.m, 2)))), rng_(params.seed) {
  if (params.m < 2 || params.ef_construction < 1 || params.ef_search < 1) {
    throw Error(Errc::invalid_argument, "hnsw parameters must be positive (m >= 2)");
  }
}

std::uint32_t HnswGraph::greedy_descend(const float* data, int dims, const float* query, std::uint32_t entry,
                                        int from_level, int to_level) const {
  std::uint32_t cur = entry;
  double cur_score = row_score(row_of(data, dims, cur), query, dims);
  for (int level = from_level; level > to_level; --level) {
    bool moved = true;
    while (moved) {
      moved = false;
      for (std::uint32_t nb : links_[cur][static_cast<std::size_t>(level)]) {
        const double s = row_score(row_of(data, dims, nb), query, dims);
        if (s > cur_score) {
          cur_score = s;
          cur = nb;
          moved = true;
        }
      }
    }
  }
  return cur;
}

HnswGraph::Candidates HnswGraph::search_layer(const float* data, int dims, const float* query, std::uint32_t entry,
                                              int ef, int level) const {
  std::vector<char> visited(links_.size(), 0);
  std::priority_queue<std::pair<double, std::uint32_t>, Candidates, Closer> frontier;
  std::priority_queue<std::pair<double, std::uint32_t>, Candidates, Farther> best;

  const double s0 = row_score(row_of(data, dims, entry), query, dims);
  visited[entry] = 1;
  frontier.emplace(s0, entry);
  best.emplace(s0, entry);

  while (!frontier.empty()) {
    auto [score, node] = frontier.top();
    if (static_cast<int>(best.size()) >= ef && score < best.top().first) break;
    frontier.pop();
    for (std::uint32_t nb : links_[node][static_cast<std::size_t>(level)]) {
      if (visited[nb]) continue;
      visited[nb] = 1;
      const double s = row_score(row_of(data, dims, nb), query, dims);
      if (static_cast<int>(best.size()) < ef || s > best.top().first) {
        frontier.emplace(s, nb);
        best.emplace(s, nb);
        if (static_cast<int>(best.size()) > ef) best.pop();
      }
    }
  }
  Candidates out;
  out.reserve(best.size());
  while (!best.empty()) {
    out.push_back(best.top());
    best.pop();
  }
  return out;
}

void HnswGraph::shrink(const float* data, int dims, std::uint32_t node, int level, std::size_t max_links) {
  auto& nbs = links_[node][static_cast<std::size_t>(level)];
  if (nbs.size() <= max_links) return;
  const float* base = row_of(data, dims, node);
  Candidates scored;
  scored.reserve(nbs.size());
  for (std::uint32_t nb : nbs) scored.emplace_back(row_score(row_of(data, dims, nb), base, dims), nb);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  nbs.clear();
  for (std::size_t i = 0; i < max_links; ++i) nbs.push_back(scored[i].second);
}

void HnswGraph::insert(const float* data, int dims, std::uint32_t node) {
  if (node != links_.size()) throw Error(Errc::invalid_argument, "hnsw rows must be inserted in order");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = 1.0 - unit(rng_);  // (0, 1]
  const int level = static_cast<int>(std::floor(-std::log(u) * level_mult_));
  links_.emplace_back(static_cast<std::size_t>(level) + 1);

  if (max_level_ < 0) {
    entry_ = node;
    max_level_ = level;
    return;
  }

  const float* query = row_of(data, dims, node);
  std::uint32_t cur = greedy_descend(data, dims, query, entry_, max_level_, level);
  const auto m = static_cast<std::size_t>(params_.m);
  for (int l = std::min(level, max_level_); l >= 0; --l) {
    Candidates found = search_layer(data, dims, query, cur, params_.ef_construction, l);
    std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const std::size_t max_links = l == 0 ? 2 * m : m;
    auto& mine = links_[node][static_cast<std::size_t>(l)];
    for (std::size_t i = 0; i < found.size() && mine.size() < m; ++i) mine.push_back(found[i].second);
    for (std::uint32_t nb : mine) {
      links_[nb][static_cast<std::size_t>(l)].push_back(node);
      shrink(data, dims, nb, l, max_links);
    }
    cur = found.front().second;
  }
  if (level > max_level_) {
    max_level_ = level;
    entry_ = node;
  }
}

std::vector<std::pair<double, std::uint32_t>> HnswGraph::search(const float* data, int dims, const float* query,
                                                                int ef) const {
  if (links_.empty()) return {};
  const std::uint32_t start = greedy_descend(data, dims, query, entry_, max_level_, 0);
  return search_layer(data, dims, query, start, ef, 0);
}

}  // namespace medrag
