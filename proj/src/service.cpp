#include "medrag/service.hpp"

#include <cstdlib>
#include <fstream>

#include "httplib.h"
#include "medrag/error.hpp"
#include "medrag/text.hpp"

namespace medrag::service {

using nlohmann::json;

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw Error(Errc::invalid_argument, "port out of range");
  if (request_timeout_ms <= 0) throw Error(Errc::invalid_argument, "request_timeout_ms must be positive");
  if (max_concurrent_requests <= 0) throw Error(Errc::invalid_argument, "max_concurrent_requests must be positive");
  embedder.validate();
  generator.validate();
  grounding.validate();
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw Error(Errc::parse, where + ": unknown key \"" + key + "\"");
  }
}

}  // namespace

ServiceConfig parse_config(const json& j) {
  if (!j.is_object()) throw Error(Errc::parse, "service config must be a JSON object");
  reject_unknown(j, {"bind_address", "port", "index_path", "embedder", "generator", "grounding", "request_timeout_ms",
                     "max_concurrent_requests"},
                 "service config");
  ServiceConfig c;
  try {
    c.bind_address = j.value("bind_address", c.bind_address);
    c.port = j.value("port", c.port);
    c.index_path = j.at("index_path").get<std::string>();
    c.request_timeout_ms = j.value("request_timeout_ms", c.request_timeout_ms);
    c.max_concurrent_requests = j.value("max_concurrent_requests", c.max_concurrent_requests);
    if (auto it = j.find("embedder"); it != j.end()) {
      reject_unknown(*it, {"kind", "dims", "endpoint", "timeout_ms"}, "embedder");
      c.embedder.kind = parse_embedder_kind(it->value("kind", std::string("reference-hash")));
      c.embedder.dims = it->value("dims", c.embedder.dims);
      c.embedder.endpoint = it->value("endpoint", std::string());
      c.embedder.timeout_ms = it->value("timeout_ms", c.embedder.timeout_ms);
    }
    if (auto it = j.find("generator"); it != j.end()) {
      reject_unknown(*it, {"kind", "endpoint", "max_answer_tokens", "timeout_ms", "temperature"}, "generator");
      c.generator.kind = parse_generator_kind(it->value("kind", std::string("extractive-stub")));
      c.generator.endpoint = it->value("endpoint", std::string());
      c.generator.max_answer_tokens = it->value("max_answer_tokens", c.generator.max_answer_tokens);
      c.generator.timeout_ms = it->value("timeout_ms", c.generator.timeout_ms);
      c.generator.temperature = it->value("temperature", c.generator.temperature);
    }
    if (auto it = j.find("grounding"); it != j.end()) {
      reject_unknown(*it, {"support_threshold", "k", "max_prompt_tokens"}, "grounding");
      c.grounding.support_threshold = it->value("support_threshold", c.grounding.support_threshold);
      c.grounding.k = it->value("k", c.grounding.k);
      c.grounding.max_prompt_tokens = it->value("max_prompt_tokens", c.grounding.max_prompt_tokens);
    }
  } catch (const json::exception& e) {
    throw Error(Errc::parse, std::string("service config: ") + e.what());
  }
  return c;
}

ServiceConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(Errc::parse, "config file " + path.string() + ": " + e.what());
  }
  ServiceConfig c = parse_config(j);
  if (const char* env = std::getenv(kPortEnvVar); env && *env) {
    try {
      std::size_t used = 0;
      c.port = std::stoi(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
    } catch (const std::exception&) {
      throw Error(Errc::invalid_argument, std::string(kPortEnvVar) + " is not a port number: " + env);
    }
  }
  if (c.index_path.is_relative()) c.index_path = path.parent_path() / c.index_path;
  c.validate();
  return c;
}

json passages_to_json(const std::vector<ScoredPassage>& ps) {
  json out = json::array();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    out.push_back({{"rank", i + 1},
                   {"marker", "[" + std::to_string(i + 1) + "]"},
                   {"passage_id", ps[i].passage.passage_id},
                   {"doc_id", ps[i].passage.doc_id},
                   {"text", ps[i].passage.text},
                   {"score", ps[i].score}});
  }
  return out;
}

json answer_to_json(const GroundedAnswer& a) {
  json support = json::array();
  for (const auto& s : a.sentence_support) {
    support.push_back({{"sentence", s.sentence},
                       {"best_score", s.best_score},
                       {"supported", s.supported},
                       {"best_passage_id", s.best_passage_id}});
  }
  return {{"answer", a.answer_text},
          {"backend", a.backend},
          {"citations", a.citations},
          {"dangling_citations", a.dangling_citations},
          {"attribution_present", a.attribution_present},
          {"passages", passages_to_json(a.retrieved)},
          {"sentence_support", support},
          {"unsupported_rate", a.unsupported_rate},
          {"latency_breakdown",
           {{"embed_ms", a.latency.embed_ms},
            {"retrieve_ms", a.latency.retrieve_ms},
            {"generate_ms", a.latency.generate_ms},
            {"total_ms", a.latency.total_ms}}}};
}

namespace {

Reply error_reply(int status, const std::string& message, const std::string& stage) {
  return {status, {{"error", message}, {"stage", stage}}};
}

int status_for(const StageError& e) {
  switch (e.code()) {
    case Errc::no_tokens: return 422;
    case Errc::timeout: return 504;
    case Errc::transport:
    case Errc::empty_completion: return 503;
    default: return 500;
  }
}

struct AskRequest {
  std::string question;
  int k = 5;
};

// Returns an error reply when the request is invalid.
std::optional<Reply> parse_request(const std::string& body, int default_k, AskRequest& out) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error&) {
    return error_reply(400, "request body is not valid JSON", "request");
  }
  if (!j.is_object()) return error_reply(400, "request body must be a JSON object", "request");
  auto q = j.find("question");
  if (q == j.end() || !q->is_string() || text::trim(q->get<std::string>()).empty()) {
    return error_reply(400, "question must be a non-empty string", "request");
  }
  out.question = q->get<std::string>();
  out.k = default_k;
  if (auto k = j.find("k"); k != j.end() && !k->is_null()) {
    if (!k->is_number_integer()) return error_reply(400, "k must be an integer", "request");
    const auto v = k->get<long long>();
    if (v < 1 || v > kMaxK) return error_reply(400, "k must lie in [1, " + std::to_string(kMaxK) + "]", "request");
    out.k = static_cast<int>(v);
  }
  return std::nullopt;
}

std::shared_ptr<const VectorIndex> load_index_or_throw(const ServiceConfig& cfg) {
  return std::make_shared<const VectorIndex>(vindex::load_index(cfg.index_path));
}

}  // namespace

struct Service::Server {
  httplib::Server http;
};

Service::Service(ServiceConfig cfg)
    : Service(cfg, load_index_or_throw(cfg),
              std::make_shared<const PassageStore>(PassageStore::load(PassageStore::sidecar_for(cfg.index_path)))) {}

Service::Service(ServiceConfig cfg, std::shared_ptr<const VectorIndex> index, std::shared_ptr<const PassageStore> store)
    : cfg_(std::move(cfg)),
      pipeline_(PipelineConfig{cfg_.embedder, cfg_.generator, cfg_.grounding}, std::move(index), std::move(store)),
      server_(std::make_unique<Server>()) {
  cfg_.validate();
  if (pipeline_.index().dims() != cfg_.embedder.dims) {
    throw Error(Errc::dimension_mismatch, "index has " + std::to_string(pipeline_.index().dims()) +
                                              " dims but the embedder produces " + std::to_string(cfg_.embedder.dims));
  }
  for (const auto& id : pipeline_.index().ids()) {
    if (!pipeline_.store().find(id)) throw Error(Errc::not_found, "index entry \"" + id + "\" has no stored passage");
  }

  auto& http = server_->http;
  const int workers = cfg_.max_concurrent_requests;
  http.new_task_queue = [workers] { return new httplib::ThreadPool(static_cast<std::size_t>(workers)); };
  const auto sec = cfg_.request_timeout_ms / 1000, usec = (cfg_.request_timeout_ms % 1000) * 1000;
  http.set_read_timeout(sec, usec);
  http.set_write_timeout(sec, usec);

  auto send = [](httplib::Response& res, const Reply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  http.Post("/ask", [this, send](const httplib::Request& req, httplib::Response& res) { send(res, handle_ask(req.body)); });
  http.Post("/retrieve",
            [this, send](const httplib::Request& req, httplib::Response& res) { send(res, handle_retrieve(req.body)); });
  http.Get("/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, handle_health()); });
}

Service::~Service() { stop(); }

Reply Service::handle_ask(const std::string& body) const {
  AskRequest req;
  if (auto err = parse_request(body, cfg_.grounding.k, req)) return *err;
  try {
    return {200, answer_to_json(pipeline_.answer(req.question, req.k))};
  } catch (const StageError& e) {
    return error_reply(status_for(e), e.detail(), e.stage());
  } catch (const std::exception& e) {
    return error_reply(500, e.what(), "internal");
  }
}

Reply Service::handle_retrieve(const std::string& body) const {
  AskRequest req;
  if (auto err = parse_request(body, cfg_.grounding.k, req)) return *err;
  try {
    return {200, {{"passages", passages_to_json(pipeline_.retrieve(req.question, req.k))}}};
  } catch (const StageError& e) {
    return error_reply(status_for(e), e.detail(), e.stage());
  } catch (const std::exception& e) {
    return error_reply(500, e.what(), "internal");
  }
}

Reply Service::handle_health() const {
  return {200,
          {{"status", "ok"},
           {"index_size", pipeline_.index().size()},
           {"dims", pipeline_.index().dims()},
           {"backend_kinds",
            {{"embedder", to_string(cfg_.embedder.kind)}, {"generator", to_string(cfg_.generator.kind)}}}}};
}

int Service::bind() {
  auto& http = server_->http;
  int port = cfg_.port;
  if (port == 0) {
    port = http.bind_to_any_port(cfg_.bind_address);
  } else if (!http.bind_to_port(cfg_.bind_address, port)) {
    port = -1;
  }
  if (port < 0) throw Error(Errc::io, "cannot bind " + cfg_.bind_address + ":" + std::to_string(cfg_.port));
  cfg_.port = port;
  return port;
}

void Service::listen() {
  if (!server_->http.listen_after_bind()) throw Error(Errc::io, "server stopped unexpectedly");
}

void Service::stop() {
  if (server_) server_->http.stop();
}

bool Service::running() const { return server_->http.is_running(); }

}  // namespace medrag::service
