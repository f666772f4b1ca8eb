#pragma once

#include <stdexcept>
#include <string>

namespace medrag {

enum class Errc {
  invalid_argument,
  parse,
  duplicate,
  dimension_mismatch,
  no_tokens,
  io,
  checksum,
  version,
  truncated,
  transport,
  timeout,
  empty_completion,
  empty_index,
  numeric,
  not_found,
};

const char* to_string(Errc code) noexcept;

/// Base error for the library. Every failure carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Error raised while answering a question, labeled with the failing stage
/// ("embed", "retrieve", "prompt", "generate", "grounding").
class StageError : public Error {
 public:
  StageError(std::string stage, Errc code, const std::string& message)
      : Error(code, stage + ": " + message), stage_(std::move(stage)), detail_(message) {}

  const std::string& stage() const noexcept { return stage_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string stage_;
  std::string detail_;
};

}  // namespace medrag
