#include "medrag/error.hpp"

namespace medrag {

const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::parse: return "parse";
    case Errc::duplicate: return "duplicate";
    case Errc::dimension_mismatch: return "dimension_mismatch";
    case Errc::no_tokens: return "no_tokens";
    case Errc::io: return "io";
    case Errc::checksum: return "checksum";
    case Errc::version: return "version";
    case Errc::truncated: return "truncated";
    case Errc::transport: return "transport";
    case Errc::timeout: return "timeout";
    case Errc::empty_completion: return "empty_completion";
    case Errc::empty_index: return "empty_index";
    case Errc::numeric: return "numeric";
    case Errc::not_found: return "not_found";
  }
  return "unknown";
}

}  // namespace medrag
