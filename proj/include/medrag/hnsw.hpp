#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace medrag {

struct HnswParams {
  int m = 16;
  int ef_construction = 200;
  int ef_search = 64;
  std::uint64_t seed = 42;
};

/// Hierarchical navigable small-world graph over rows of an external
/// row-major float matrix, scored by inner product (higher is closer).
class HnswGraph {
 public:
  explicit HnswGraph(const HnswParams& params);

  const HnswParams& params() const noexcept { return params_; }
  std::size_t size() const noexcept { return links_.size(); }

  /// Inserts row `node` (must equal size()) of `data`.
  void insert(const float* data, int dims, std::uint32_t node);

  /// Best `ef` candidates as (score, row), unsorted.
  std::vector<std::pair<double, std::uint32_t>> search(const float* data, int dims, const float* query,
                                                       int ef) const;

 private:
  using Candidates = std::vector<std::pair<double, std::uint32_t>>;

  Candidates search_layer(const float* data, int dims, const float* query, std::uint32_t entry, int ef,
                          int level) const;
  std::uint32_t greedy_descend(const float* data, int dims, const float* query, std::uint32_t entry, int from_level,
                               int to_level) const;
  void shrink(const float* data, int dims, std::uint32_t node, int level, std::size_t max_links);

  HnswParams params_;
  double level_mult_;
  std::mt19937_64 rng_;
  std::vector<std::vector<std::vector<std::uint32_t>>> links_;  // node -> level -> neighbours
  std::uint32_t entry_ = 0;
  int max_level_ = -1;
};

}  // namespace medrag
