#include "http_client.hpp"

#include <chrono>

#include "httplib.h"
#include "medrag/error.hpp"

namespace medrag::detail {

namespace {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Url split_url(const std::string& endpoint) {
  auto scheme = endpoint.find("://");
  if (scheme == std::string::npos) throw Error(Errc::invalid_argument, "endpoint must be an absolute URL: " + endpoint);
  if (endpoint.compare(0, scheme, "http") != 0) {
    throw Error(Errc::invalid_argument, "only http:// endpoints are supported: " + endpoint);
  }
  auto slash = endpoint.find('/', scheme + 3);
  if (slash == std::string::npos) return {endpoint, "/"};
  return {endpoint.substr(0, slash), endpoint.substr(slash)};
}

}  // namespace

nlohmann::json post_json(const std::string& endpoint, const nlohmann::json& body, int timeout_ms) {
  const Url url = split_url(endpoint);
  httplib::Client client(url.origin);
  const auto sec = timeout_ms / 1000;
  const auto usec = (timeout_ms % 1000) * 1000;
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);

  const auto started = std::chrono::steady_clock::now();
  auto res = client.Post(url.path, body.dump(), "application/json");
  if (!res) {
    const auto elapsed =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count();
    const auto err = res.error();
    if (err == httplib::Error::ConnectionTimeout || (err == httplib::Error::Read && elapsed >= timeout_ms)) {
      throw Error(Errc::timeout, endpoint + " timed out after " + std::to_string(timeout_ms) + " ms");
    }
    throw Error(Errc::transport, endpoint + ": " + httplib::to_string(err));
  }
  if (res->status < 200 || res->status >= 300) {
    throw Error(Errc::transport, endpoint + " returned HTTP " + std::to_string(res->status));
  }
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error&) {
    throw Error(Errc::transport, endpoint + " returned a body that is not JSON");
  }
}

}  // namespace medrag::detail
