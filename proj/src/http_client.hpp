#pragma once

#include <string>

#include "json.hpp"

namespace medrag::detail {

/// POSTs a JSON document and parses the JSON reply. Maps failures onto
/// Errc::timeout (deadline exceeded) and Errc::transport (everything else,
/// including non-2xx replies and unparseable bodies).
nlohmann::json post_json(const std::string& endpoint, const nlohmann::json& body, int timeout_ms);

}  // namespace medrag::detail
