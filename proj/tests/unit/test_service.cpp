#include <sys/wait.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "doctest.h"
#include "json.hpp"
#include "medrag/error.hpp"
#include "medrag/service.hpp"
#include "support/fixture.hpp"
#include "support/mock_server.hpp"
#include "support/synthetic.hpp"
#include "support/tempdir.hpp"

using namespace medrag;
using namespace medrag::service;
using nlohmann::json;

namespace {

std::vector<Passage> passages(int n, std::uint64_t seed = 21) {
  testing::Synth syn(seed);
  std::vector<Passage> ps;
  for (int i = 0; i < n; ++i) ps.push_back(testing::make_passage("doc" + std::to_string(i) + "#0", syn.body(2, 4)));
  return ps;
}

ServiceConfig base_config() {
  ServiceConfig c;
  c.port = 0;
  return c;
}

Service make_service(const std::vector<Passage>& ps, ServiceConfig cfg = base_config()) {
  const auto fx = testing::build_fixture(ps);
  return Service(std::move(cfg), fx.index, fx.store);
}

int context_lines(const std::string& prompt) {
  int n = 0;
  for (int i = 1; i <= 30; ++i) {
    if (prompt.find("\n[" + std::to_string(i) + "] ") != std::string::npos) ++n;
  }
  return n;
}

int run_status(const std::string& cmd) {
  const int rc = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// Runs a Service on a free port for the lifetime of the object.
class Running {
 public:
  explicit Running(Service& s) : svc_(s) {
    port_ = svc_.bind();
    thread_ = std::thread([this] { svc_.listen(); });
    while (!svc_.running()) std::this_thread::yield();
  }
  ~Running() {
    svc_.stop();
    thread_.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(30, 0);
    return c;
  }

 private:
  Service& svc_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST_CASE("/ask handler") {
  const auto svc = make_service(passages(10));

  SUBCASE("valid question with the stub backend") {
    const auto r = svc.handle_ask(R"({"question":"Does aspirin reduce mortality in stroke?"})");
    REQUIRE(r.status == 200);
    CHECK(r.body["unsupported_rate"] == 0.0);
    CHECK(r.body["attribution_present"] == true);
    CHECK(r.body["backend"] == "extractive-stub");
    const auto& ps = r.body["passages"];
    REQUIRE(ps.size() == 5);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      CHECK(ps[i]["rank"] == i + 1);
      CHECK(ps[i].contains("passage_id"));
      CHECK(ps[i].contains("text"));
      if (i) CHECK(ps[i - 1]["score"].get<double>() >= ps[i]["score"].get<double>());
    }
    for (const auto& c : r.body["citations"]) CHECK((c.get<int>() >= 1 && c.get<int>() <= 5));
    for (const char* key : {"embed_ms", "retrieve_ms", "generate_ms", "total_ms"}) {
      CHECK(r.body["latency_breakdown"][key].get<double>() >= 0.0);
    }
    CHECK(r.body["answer"].get<std::string>().size() > 0);
  }

  SUBCASE("explicit k") {
    CHECK(svc.handle_ask(R"({"question":"aspirin","k":2})").body["passages"].size() == 2);
    CHECK(svc.handle_ask(R"({"question":"aspirin","k":20})").body["passages"].size() == 10);
  }

  SUBCASE("request validation") {
    for (const char* body : {R"({"question":""})", R"({"question":"   "})", R"({"k":3})", R"({"question":"a","k":0})",
                             R"({"question":"a","k":21})", R"({"question":"a","k":"5"})", R"({"question":"a","k":2.5})",
                             "not json", "[1,2]", R"({"question":7})"}) {
      const auto r = svc.handle_ask(body);
      CHECK_MESSAGE(r.status == 400, body);
      CHECK(r.body["stage"] == "request");
      CHECK(r.body.contains("error"));
    }
  }

  SUBCASE("question without tokens is 422") {
    const auto r = svc.handle_ask(R"({"question":"?!?"})");
    CHECK(r.status == 422);
    CHECK(r.body["stage"] == "embed");
  }
}

TEST_CASE("/ask maps generator failures to 503 and 504") {
  const auto ps = passages(10);
  std::atomic<int> mode{0};
  testing::MockServer gen("/gen", [&](const httplib::Request&, httplib::Response& res) {
    if (mode == 1) std::this_thread::sleep_for(std::chrono::milliseconds(500));
    res.set_content(mode == 2 ? R"({"text":""})" : R"({"text":"fine [1]"})", "application/json");
  });
  auto cfg = base_config();
  cfg.generator.kind = GeneratorKind::remote;
  cfg.generator.endpoint = gen.url("/gen");
  cfg.generator.timeout_ms = 100;
  const auto svc = make_service(ps, cfg);

  mode = 1;
  auto r = svc.handle_ask(R"({"question":"aspirin"})");
  CHECK(r.status == 504);
  CHECK(r.body["stage"] == "generate");

  mode = 2;
  r = svc.handle_ask(R"({"question":"aspirin"})");
  CHECK(r.status == 503);
  CHECK(r.body["stage"] == "generate");

  auto down = cfg;
  down.generator.endpoint = "http://127.0.0.1:" + std::to_string(testing::closed_port()) + "/gen";
  r = make_service(ps, down).handle_ask(R"({"question":"aspirin"})");
  CHECK(r.status == 503);
  CHECK(r.body["stage"] == "generate");
}

TEST_CASE("/ask passes exactly five contexts by default") {
  std::string seen;
  testing::MockServer gen("/gen", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body)["prompt"];
    res.set_content(R"({"text":"ok [1]"})", "application/json");
  });
  auto cfg = base_config();
  cfg.generator.kind = GeneratorKind::remote;
  cfg.generator.endpoint = gen.url("/gen");
  const auto svc = make_service(passages(12), cfg);
  REQUIRE(svc.handle_ask(R"({"question":"aspirin dose"})").status == 200);
  CHECK(context_lines(seen) == 5);
}

TEST_CASE("/retrieve handler") {
  SUBCASE("single passage corpus") {
    const auto svc = make_service({testing::make_passage("solo#0", "Heparin prevents clots.")});
    const auto r = svc.handle_retrieve(R"({"question":"unrelated words entirely"})");
    REQUIRE(r.status == 200);
    REQUIRE(r.body["passages"].size() == 1);
    CHECK(r.body["passages"][0]["passage_id"] == "solo#0");
  }
  SUBCASE("k=5 over ten passages, non-increasing scores") {
    const auto svc = make_service(passages(10));
    const auto r = svc.handle_retrieve(R"({"question":"metformin heart failure","k":5})");
    const auto& ps = r.body["passages"];
    REQUIRE(ps.size() == 5);
    for (std::size_t i = 1; i < ps.size(); ++i) CHECK(ps[i - 1]["score"].get<double>() >= ps[i]["score"].get<double>());
    CHECK(svc.handle_retrieve(R"({"question":"x","k":0})").status == 400);
  }
}

TEST_CASE("/health") {
  const auto svc = make_service(passages(100));
  const auto r = svc.handle_health();
  CHECK(r.status == 200);
  CHECK(r.body["status"] == "ok");
  CHECK(r.body["index_size"] == 100);
  CHECK(r.body["dims"] == 256);
  CHECK(r.body["backend_kinds"]["generator"] == "extractive-stub");
  CHECK(r.body["backend_kinds"]["embedder"] == "reference-hash");
}

TEST_CASE("HTTP round trip and concurrent requests") {
  auto cfg = base_config();
  cfg.max_concurrent_requests = 4;
  auto svc = make_service(passages(30), cfg);
  Running run(svc);

  auto cli = run.client();
  auto health = cli.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(json::parse(health->body)["index_size"] == 30);

  auto bad = cli.Post("/ask", R"({"question":""})", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(json::parse(bad->body)["stage"] == "request");

  auto ret = cli.Post("/retrieve", R"({"question":"aspirin"})", "application/json");
  REQUIRE(ret);
  CHECK(json::parse(ret->body)["passages"].size() == 5);

  const std::string body = R"({"question":"What is the recommended first-line therapy for gout?"})";
  auto first = cli.Post("/ask", body, "application/json");
  REQUIRE(first);
  REQUIRE(first->status == 200);
  const auto expected = json::parse(first->body)["answer"];

  std::vector<std::thread> threads;
  std::atomic<int> same{0};
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&] {
      auto c = run.client();
      for (int i = 0; i < 3; ++i) {
        auto r = c.Post("/ask", body, "application/json");
        if (r && r->status == 200 && json::parse(r->body)["answer"] == expected) ++same;
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(same == 24);
}

TEST_CASE("service config") {
  SUBCASE("parse with nested sections") {
    const auto c = parse_config(json::parse(R"({
      "index_path": "idx.bin", "port": 9000,
      "embedder": {"kind": "reference-hash", "dims": 128},
      "generator": {"kind": "stub", "max_answer_tokens": 100},
      "grounding": {"k": 3, "support_threshold": 0.5},
      "request_timeout_ms": 2000, "max_concurrent_requests": 2})"));
    CHECK(c.port == 9000);
    CHECK(c.embedder.dims == 128);
    CHECK(c.generator.max_answer_tokens == 100);
    CHECK(c.grounding.k == 3);
    CHECK(c.grounding.support_threshold == 0.5);
    CHECK(c.max_concurrent_requests == 2);
  }
  SUBCASE("rejections") {
    CHECK_THROWS_AS(parse_config(json::parse(R"({"index_path":"x","colour":1})")), Error);
    CHECK_THROWS_AS(parse_config(json::parse(R"({"port":1})")), Error);
    CHECK_THROWS_AS(parse_config(json::parse(R"({"index_path":"x","grounding":{"tau":1}})")), Error);
    CHECK_THROWS_AS(parse_config(json::parse(R"({"index_path":"x","port":"high"})")), Error);
    CHECK_THROWS_AS(parse_config(json::parse(R"([])")), Error);
  }

  SUBCASE("file loading, relative index path and port override") {
    testing::TempDir dir;
    testing::write_file(dir / "svc.json", R"({"index_path":"data/idx.bin","port":7000})");
    ::unsetenv(kPortEnvVar);
    auto c = load_config(dir / "svc.json");
    CHECK(c.port == 7000);
    CHECK(c.index_path == dir / "data/idx.bin");
    ::setenv(kPortEnvVar, "7123", 1);
    CHECK(load_config(dir / "svc.json").port == 7123);
    ::setenv(kPortEnvVar, "70x", 1);
    CHECK_THROWS_AS(load_config(dir / "svc.json"), Error);
    ::unsetenv(kPortEnvVar);
    testing::write_file(dir / "broken.json", "{");
    CHECK_THROWS_AS(load_config(dir / "broken.json"), Error);
    CHECK_THROWS_AS(load_config(dir / "absent.json"), Error);
  }
}

TEST_CASE("service startup from files") {
  testing::TempDir dir;
  const auto ps = passages(15);
  const auto fx = testing::build_fixture(ps);
  vindex::save_index(*fx.index, dir / "idx.bin");
  PassageStore(ps).save(PassageStore::sidecar_for(dir / "idx.bin"));

  ServiceConfig cfg = base_config();
  cfg.index_path = dir / "idx.bin";
  Service svc(cfg);
  CHECK(svc.handle_health().body["index_size"] == 15);

  cfg.index_path = dir / "missing.bin";
  CHECK_THROWS_AS(Service{cfg}, Error);

  cfg = base_config();
  cfg.index_path = dir / "idx.bin";
  cfg.embedder.dims = 128;
  CHECK_THROWS_AS(Service{cfg}, Error);

  SUBCASE("server binary exits nonzero when startup fails") {
    testing::write_file(dir / "bad.json", R"({"index_path":"missing.bin","port":0})");
    const std::string exe = MEDRAG_SERVER_EXE;
    CHECK(run_status(exe + " --config " + (dir / "bad.json").string()) == 2);
    CHECK(run_status(exe + " --config " + (dir / "nope.json").string()) == 2);
    CHECK(run_status(exe) == 2);
  }
}
