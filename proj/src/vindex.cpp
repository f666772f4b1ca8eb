#include "medrag/vindex.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_set>

#include "medrag/error.hpp"

namespace medrag {

double row_score(const float* row, const float* query, int dims) noexcept {
  double acc = 0.0;
  for (int i = 0; i < dims; ++i) acc += static_cast<double>(row[i]) * static_cast<double>(query[i]);
  return acc;
}

namespace {

// Ranking order: higher score first, then ascending id.
bool ranks_before(double sa, const std::string& ia, double sb, const std::string& ib) {
  if (sa != sb) return sa > sb;
  return ia < ib;
}

void check_finite(const Embedding& v, const char* what) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw Error(Errc::numeric, std::string(what) + " contains NaN/Inf");
  }
}

}  // namespace

VectorIndex::VectorIndex(int dims) : dims_(dims) {
  if (dims < 1) throw Error(Errc::invalid_argument, "index dims must be positive");
}

void VectorIndex::add(std::string passage_id, const Embedding& vec) {
  if (vec.size() != dims_) {
    throw Error(Errc::dimension_mismatch, "vector for \"" + passage_id + "\" has " + std::to_string(vec.size()) +
                                              " dims, index has " + std::to_string(dims_));
  }
  check_finite(vec, "vector");
  if (rows_.count(passage_id)) throw Error(Errc::duplicate, "passage_id \"" + passage_id + "\" already indexed");
  const std::size_t row = ids_.size();
  rows_.emplace(passage_id, row);
  ids_.push_back(std::move(passage_id));
  data_.insert(data_.end(), vec.data(), vec.data() + dims_);
  if (graph_) graph_->insert(data_.data(), dims_, static_cast<std::uint32_t>(row));
}

Eigen::Map<const Eigen::VectorXf> VectorIndex::vector(std::size_t row) const {
  if (row >= size()) throw Error(Errc::not_found, "row " + std::to_string(row) + " out of range");
  return Eigen::Map<const Eigen::VectorXf>(data_.data() + row * static_cast<std::size_t>(dims_), dims_);
}

std::optional<std::size_t> VectorIndex::find(std::string_view passage_id) const {
  auto it = rows_.find(std::string(passage_id));
  if (it == rows_.end()) return std::nullopt;
  return it->second;
}

std::size_t VectorIndex::id_table_bytes() const noexcept {
  std::size_t n = 0;
  for (const auto& id : ids_) n += sizeof(std::uint32_t) + id.size();
  return n;
}

void VectorIndex::check_query(const Embedding& query, int k) const {
  if (k < 1) throw Error(Errc::invalid_argument, "k must be >= 1");
  if (empty()) throw Error(Errc::empty_index, "index is empty");
  if (query.size() != dims_) {
    throw Error(Errc::dimension_mismatch,
                "query has " + std::to_string(query.size()) + " dims, index has " + std::to_string(dims_));
  }
  check_finite(query, "query");
}

RetrievalResult VectorIndex::search_exact(const Embedding& query, int k) const {
  check_query(query, k);
  const std::size_t n = size();
  std::vector<std::pair<double, std::size_t>> scored(n);
  for (std::size_t r = 0; r < n; ++r) {
    scored[r] = {row_score(data_.data() + r * static_cast<std::size_t>(dims_), query.data(), dims_), r};
  }
  const std::size_t take = std::min(n, static_cast<std::size_t>(k));
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                    [&](const auto& a, const auto& b) { return ranks_before(a.first, ids_[a.second], b.first, ids_[b.second]); });
  RetrievalResult out;
  out.query_dims = dims_;
  out.hits.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.hits.push_back({ids_[scored[i].second], scored[i].first});
  return out;
}

RetrievalResult VectorIndex::search(const Embedding& query, int k) const {
  if (!graph_) return search_exact(query, k);
  check_query(query, k);
  auto found = graph_->search(data_.data(), dims_, query.data(), std::max(k, graph_->params().ef_search));
  std::sort(found.begin(), found.end(),
            [&](const auto& a, const auto& b) { return ranks_before(a.first, ids_[a.second], b.first, ids_[b.second]); });
  RetrievalResult out;
  out.query_dims = dims_;
  const std::size_t take = std::min(found.size(), static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < take; ++i) out.hits.push_back({ids_[found[i].second], found[i].first});
  return out;
}

void VectorIndex::enable_hnsw(const HnswParams& params) {
  HnswGraph graph(params);
  for (std::size_t r = 0; r < size(); ++r) graph.insert(data_.data(), dims_, static_cast<std::uint32_t>(r));
  graph_ = std::move(graph);
}

namespace vindex {

namespace {

constexpr char kMagic[8] = {'M', 'R', 'A', 'G', 'I', 'D', 'X', '\0'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}
std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}
std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::uint32_t crc_of(const unsigned char* data, std::size_t len) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (len > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(len, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    len -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void save_index(const VectorIndex& index, const std::filesystem::path& path) {
  std::string payload;
  payload.reserve(index.id_table_bytes() + index.vector_bytes());
  for (const auto& id : index.ids()) {
    put_u32(payload, static_cast<std::uint32_t>(id.size()));
    payload += id;
  }
  for (float f : index.data()) put_u32(payload, std::bit_cast<std::uint32_t>(f));

  std::string header(kMagic, sizeof kMagic);
  put_u32(header, kFormatVersion);
  put_u32(header, static_cast<std::uint32_t>(index.dims()));
  put_u64(header, index.size());
  put_u32(header, crc_of(reinterpret_cast<const unsigned char*>(payload.data()), payload.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write index file " + path.string());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error(Errc::io, "write failed for index file " + path.string());
}

VectorIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open index file " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());

  if (bytes.size() < kHeaderBytes) throw Error(Errc::truncated, "index file shorter than its header");
  if (std::memcmp(p, kMagic, sizeof kMagic) != 0) throw Error(Errc::parse, "not an index file (bad magic)");
  const std::uint32_t version = get_u32(p + 8);
  if (version != kFormatVersion) {
    throw Error(Errc::version, "index format version " + std::to_string(version) + ", expected " +
                                   std::to_string(kFormatVersion));
  }
  const std::uint32_t dims = get_u32(p + 12);
  const std::uint64_t count = get_u64(p + 16);
  const std::uint32_t checksum = get_u32(p + 24);
  if (dims == 0) throw Error(Errc::parse, "index header has zero dims");

  const std::size_t payload_len = bytes.size() - kHeaderBytes;
  // Lower bound: every id costs at least its length prefix.
  const long double min_len = static_cast<long double>(count) * (4.0L + 4.0L * dims);
  if (min_len > static_cast<long double>(payload_len)) throw Error(Errc::truncated, "index file is truncated");

  const unsigned char* cur = p + kHeaderBytes;
  const unsigned char* end = p + bytes.size();
  std::vector<std::string> ids;
  ids.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    if (end - cur < 4) throw Error(Errc::truncated, "index id table is truncated");
    const std::uint32_t len = get_u32(cur);
    cur += 4;
    if (static_cast<std::uint64_t>(end - cur) < len) throw Error(Errc::truncated, "index id table is truncated");
    ids.emplace_back(reinterpret_cast<const char*>(cur), len);
    cur += len;
  }
  const std::size_t vec_len = static_cast<std::size_t>(count) * dims * 4;
  if (static_cast<std::size_t>(end - cur) < vec_len) throw Error(Errc::truncated, "index vectors are truncated");
  if (static_cast<std::size_t>(end - cur) > vec_len) throw Error(Errc::parse, "trailing bytes after index vectors");
  if (crc_of(p + kHeaderBytes, payload_len) != checksum) throw Error(Errc::checksum, "index checksum mismatch");

  VectorIndex index(static_cast<int>(dims));
  Embedding v(dims);
  for (std::uint64_t i = 0; i < count; ++i) {
    for (std::uint32_t d = 0; d < dims; ++d) {
      v[d] = std::bit_cast<float>(get_u32(cur));
      cur += 4;
    }
    index.add(std::move(ids[i]), v);
  }
  return index;
}

double recall_at_k(const VectorIndex& approx, const VectorIndex& exact, const std::vector<Embedding>& queries, int k) {
  if (queries.empty()) throw Error(Errc::invalid_argument, "recall_at_k needs at least one query");
  if (approx.size() != exact.size() || approx.dims() != exact.dims()) {
    throw Error(Errc::invalid_argument, "recall_at_k: indexes hold different entry sets");
  }
  for (const auto& id : approx.ids()) {
    if (!exact.find(id)) throw Error(Errc::invalid_argument, "recall_at_k: \"" + id + "\" missing from exact index");
  }
  double total = 0.0;
  for (const auto& q : queries) {
    const auto truth = exact.search_exact(q, k);
    const auto got = approx.search(q, k);
    std::unordered_set<std::string> got_ids;
    for (const auto& h : got.hits) got_ids.insert(h.passage_id);
    std::size_t found = 0;
    for (const auto& h : truth.hits) found += got_ids.count(h.passage_id);
    total += static_cast<double>(found) / static_cast<double>(truth.hits.size());
  }
  return total / static_cast<double>(queries.size());
}

}  // namespace vindex
}  // namespace medrag
