#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "medrag/embed.hpp"
#include "medrag/hnsw.hpp"

namespace medrag {

struct Hit {
  std::string passage_id;
  double score = 0.0;

  bool operator==(const Hit&) const = default;
};

/// Hits sorted by score descending, ties by ascending passage_id.
struct RetrievalResult {
  std::vector<Hit> hits;
  int query_dims = 0;

  bool operator==(const RetrievalResult&) const = default;
};

enum class IndexMode { exact, hnsw };

/// Maximum-inner-product index over unit embeddings.
///
/// Thread-safety: const members may run concurrently; add() and
/// enable_hnsw() require exclusive access.
class VectorIndex {
 public:
  explicit VectorIndex(int dims);

  int dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  IndexMode mode() const noexcept { return graph_ ? IndexMode::hnsw : IndexMode::exact; }

  /// Errc::duplicate on a repeated id, Errc::dimension_mismatch on a wrong-size vector.
  void add(std::string passage_id, const Embedding& vec);

  const std::string& id(std::size_t row) const { return ids_.at(row); }
  Eigen::Map<const Eigen::VectorXf> vector(std::size_t row) const;
  std::optional<std::size_t> find(std::string_view passage_id) const;
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::vector<float>& data() const noexcept { return data_; }

  /// Dispatches on mode(): exact scan, or graph search when HNSW is enabled.
  RetrievalResult search(const Embedding& query, int k) const;
  RetrievalResult search_exact(const Embedding& query, int k) const;

  /// Builds the navigable graph over current entries; later add() calls
  /// insert into it incrementally.
  void enable_hnsw(const HnswParams& params = {});
  void disable_hnsw() noexcept { graph_.reset(); }
  const HnswParams* hnsw_params() const noexcept { return graph_ ? &graph_->params() : nullptr; }

  /// Host bytes taken by vectors (count*dims*4) and by the id table
  /// (u32 length prefix + bytes per id), as laid out on disk.
  std::size_t vector_bytes() const noexcept { return data_.size() * sizeof(float); }
  std::size_t id_table_bytes() const noexcept;

 private:
  void check_query(const Embedding& query, int k) const;

  int dims_;
  std::vector<std::string> ids_;
  std::vector<float> data_;  // row-major, size() x dims_
  std::unordered_map<std::string, std::size_t> rows_;
  std::optional<HnswGraph> graph_;
};

/// Inner product of a stored row with a query, double accumulation in
/// coordinate order; the same arithmetic as embed::similarity.
double row_score(const float* row, const float* query, int dims) noexcept;

namespace vindex {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderBytes = 28;

/// Writes the little-endian index file: magic "MRAGIDX\0", u32 version,
/// u32 dims, u64 count, u32 CRC-32 of the payload, then the id table
/// (u32 length + bytes per id) and count*dims float32 values.
void save_index(const VectorIndex& index, const std::filesystem::path& path);

/// Always returns an exact-mode index; Errc::version, Errc::checksum,
/// Errc::truncated or Errc::parse on a bad file.
VectorIndex load_index(const std::filesystem::path& path);

/// Mean fraction of the exact top-k ids recovered by `approx.search`.
double recall_at_k(const VectorIndex& approx, const VectorIndex& exact, const std::vector<Embedding>& queries, int k);

}  // namespace vindex
}  // namespace medrag
