#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "json.hpp"
#include "medrag/pipeline.hpp"

namespace medrag::service {

struct ServiceConfig {
  std::string bind_address = "127.0.0.1";
  int port = 8080;
  std::filesystem::path index_path;
  EmbedderConfig embedder;
  GeneratorConfig generator;
  GroundingConfig grounding;
  int request_timeout_ms = 60000;
  int max_concurrent_requests = 8;

  void validate() const;
};

inline constexpr const char* kPortEnvVar = "MEDRAG_PORT";
inline constexpr int kMaxK = 20;

/// Keys mirror ServiceConfig; nested objects "embedder", "generator" and
/// "grounding" use the field names of their structs. Unknown keys are errors.
ServiceConfig parse_config(const nlohmann::json& j);
/// Reads a config file and applies the MEDRAG_PORT override.
ServiceConfig load_config(const std::filesystem::path& path);

struct Reply {
  int status = 200;
  nlohmann::json body;
};

nlohmann::json answer_to_json(const GroundedAnswer& a);
nlohmann::json passages_to_json(const std::vector<ScoredPassage>& ps);

/// HTTP front end over a read-only pipeline. Handlers are pure functions of
/// the request body and the loaded index.
class Service {
 public:
  /// Loads the index and its passage sidecar; throws if either fails.
  explicit Service(ServiceConfig cfg);
  Service(ServiceConfig cfg, std::shared_ptr<const VectorIndex> index, std::shared_ptr<const PassageStore> store);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  Reply handle_ask(const std::string& body) const;
  Reply handle_retrieve(const std::string& body) const;
  Reply handle_health() const;

  /// Binds the configured address; port 0 picks a free port. Returns the port.
  int bind();
  /// Serves until stop(). Requires bind().
  void listen();
  void stop();
  bool running() const;
  const ServiceConfig& config() const noexcept { return cfg_; }

 private:
  struct Server;
  ServiceConfig cfg_;
  Pipeline pipeline_;
  std::unique_ptr<Server> server_;
};

}  // namespace medrag::service
