#include "medrag/embed.hpp"

#include <cmath>

#include "http_client.hpp"
#include "medrag/error.hpp"
#include "medrag/text.hpp"

namespace medrag {

void EmbedderConfig::validate() const {
  if (dims < 8) throw Error(Errc::invalid_argument, "embedder dims must be >= 8");
  if (kind == EmbedderKind::remote && endpoint.empty()) {
    throw Error(Errc::invalid_argument, "remote embedder requires an endpoint");
  }
  if (kind != EmbedderKind::remote && !endpoint.empty()) {
    throw Error(Errc::invalid_argument, "endpoint is only valid for the remote embedder");
  }
  if (timeout_ms <= 0) throw Error(Errc::invalid_argument, "embedder timeout_ms must be positive");
}

EmbedderKind parse_embedder_kind(std::string_view name) {
  if (name == "reference-hash" || name == "reference" || name == "ref") return EmbedderKind::reference_hash;
  if (name == "remote") return EmbedderKind::remote;
  throw Error(Errc::invalid_argument, "unknown embedder kind \"" + std::string(name) + "\"");
}

const char* to_string(EmbedderKind kind) noexcept {
  return kind == EmbedderKind::remote ? "remote" : "reference-hash";
}

namespace embed {

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

Embedding unit_from(const std::vector<double>& acc) {
  double sq = 0.0;
  for (double x : acc) sq += x * x;
  const double norm = std::sqrt(sq);
  Embedding v(static_cast<Eigen::Index>(acc.size()));
  for (std::size_t i = 0; i < acc.size(); ++i) v[static_cast<Eigen::Index>(i)] = static_cast<float>(acc[i] / norm);
  return v;
}

}  // namespace

Embedding reference_embed(std::string_view text, int dims) {
  if (dims < 8) throw Error(Errc::invalid_argument, "embedder dims must be >= 8");
  const auto tokens = text::alnum_tokens(text);
  if (tokens.empty()) throw Error(Errc::no_tokens, "text has no alphanumeric tokens");

  const auto d = static_cast<std::uint64_t>(dims);
  std::vector<double> signed_acc(static_cast<std::size_t>(dims), 0.0);
  std::vector<double> count_acc(static_cast<std::size_t>(dims), 0.0);
  for (const auto& tok : tokens) {
    const std::uint64_t h = fnv1a64(tok);
    const auto slot = static_cast<std::size_t>(h % d);
    signed_acc[slot] += (h >> 63) == 0 ? 1.0 : -1.0;
    count_acc[slot] += 1.0;
  }
  bool all_zero = true;
  for (double x : signed_acc) all_zero = all_zero && x == 0.0;
  return unit_from(all_zero ? count_acc : signed_acc);
}

void normalize(Embedding& v) {
  double sq = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw Error(Errc::numeric, "embedding contains NaN/Inf");
    sq += static_cast<double>(v[i]) * static_cast<double>(v[i]);
  }
  if (sq == 0.0) throw Error(Errc::numeric, "cannot normalize a zero vector");
  const double norm = std::sqrt(sq);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = static_cast<float>(static_cast<double>(v[i]) / norm);
}

namespace {

std::vector<Embedding> remote_embed(const EmbedderConfig& cfg, const std::vector<std::string>& texts) {
  nlohmann::json req = {{"texts", texts}};
  const nlohmann::json res = detail::post_json(cfg.endpoint, req, cfg.timeout_ms);
  auto it = res.find("vectors");
  if (it == res.end() || !it->is_array()) throw Error(Errc::transport, "embedder response lacks \"vectors\"");
  if (it->size() != texts.size()) {
    throw Error(Errc::transport, "embedder returned " + std::to_string(it->size()) + " vectors for " +
                                     std::to_string(texts.size()) + " texts");
  }
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& row : *it) {
    if (!row.is_array()) throw Error(Errc::transport, "embedder vector is not an array");
    if (row.size() != static_cast<std::size_t>(cfg.dims)) {
      throw Error(Errc::dimension_mismatch, "embedder returned " + std::to_string(row.size()) +
                                                " dims, expected " + std::to_string(cfg.dims));
    }
    Embedding v(cfg.dims);
    for (int i = 0; i < cfg.dims; ++i) {
      if (!row[static_cast<std::size_t>(i)].is_number()) throw Error(Errc::transport, "embedder value is not a number");
      v[i] = row[static_cast<std::size_t>(i)].get<float>();
    }
    normalize(v);
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

Embedding embed_text(const EmbedderConfig& cfg, std::string_view text) {
  cfg.validate();
  if (cfg.kind == EmbedderKind::reference_hash) return reference_embed(text, cfg.dims);
  if (text::alnum_tokens(text).empty()) throw Error(Errc::no_tokens, "text has no alphanumeric tokens");
  return remote_embed(cfg, {std::string(text)}).front();
}

std::vector<Embedding> embed_batch(const EmbedderConfig& cfg, const std::vector<std::string>& texts) {
  cfg.validate();
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (text::alnum_tokens(texts[i]).empty()) {
      throw Error(Errc::no_tokens, "text " + std::to_string(i) + " has no alphanumeric tokens");
    }
  }
  if (texts.empty()) return {};
  if (cfg.kind == EmbedderKind::remote) return remote_embed(cfg, texts);
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(reference_embed(t, cfg.dims));
  return out;
}

double similarity(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) {
    throw Error(Errc::dimension_mismatch,
                "similarity of " + std::to_string(a.size()) + "-d and " + std::to_string(b.size()) + "-d vectors");
  }
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

}  // namespace embed
}  // namespace medrag
