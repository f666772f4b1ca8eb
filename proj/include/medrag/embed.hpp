#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace medrag {

/// Unit-norm embedding. Stored as float32, the index storage precision.
using Embedding = Eigen::VectorXf;

enum class EmbedderKind { reference_hash, remote };

struct EmbedderConfig {
  EmbedderKind kind = EmbedderKind::reference_hash;
  int dims = 256;
  std::string endpoint;     // remote only
  int timeout_ms = 10000;   // remote only, per request

  /// Throws Errc::invalid_argument on dims < 8 or an endpoint/kind mismatch.
  void validate() const;
};

EmbedderKind parse_embedder_kind(std::string_view name);
const char* to_string(EmbedderKind kind) noexcept;

namespace embed {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

/// Feature-hashing embedder. Lowercases, takes maximal [a-z0-9] runs, hashes
/// each with FNV-1a 64, adds +1 (bit 63 clear) or -1 (bit 63 set) at
/// coordinate h mod dims, then L2-normalizes. When signed accumulation
/// cancels to the zero vector the unsigned counts are used instead.
Embedding reference_embed(std::string_view text, int dims);

Embedding embed_text(const EmbedderConfig& cfg, std::string_view text);

/// Order-preserving. Errors name the index of the first offending text.
std::vector<Embedding> embed_batch(const EmbedderConfig& cfg, const std::vector<std::string>& texts);

/// Inner product accumulated in double, sequentially over coordinates.
double similarity(const Embedding& a, const Embedding& b);

/// Scales `v` to unit L2 norm; throws Errc::numeric for zero or non-finite input.
void normalize(Embedding& v);

}  // namespace embed
}  // namespace medrag
