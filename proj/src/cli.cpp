#include "medrag/cli.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "medrag/error.hpp"
#include "medrag/eval.hpp"
#include "medrag/pipeline.hpp"
#include "medrag/text.hpp"

namespace medrag::cli {

using nlohmann::json;

namespace {

struct EmbedFlags {
  std::string kind = "reference-hash";
  std::string endpoint;
  int timeout_ms = 10000;

  EmbedderConfig config(int dims) const {
    EmbedderConfig c{parse_embedder_kind(kind), dims, endpoint, timeout_ms};
    c.validate();
    return c;
  }
};

struct GenFlags {
  std::string backend = "stub";
  std::string endpoint;
  int max_answer_tokens = 256;
  int timeout_ms = 30000;

  GeneratorConfig config() const {
    GeneratorConfig c{parse_generator_kind(backend), endpoint, max_answer_tokens, timeout_ms, 0.0};
    c.validate();
    return c;
  }
};

void add_embed_flags(CLI::App* cmd, EmbedFlags& f) {
  cmd->add_option("--embedder", f.kind, "reference-hash | remote")->capture_default_str();
  cmd->add_option("--embed-endpoint", f.endpoint, "URL of a remote embedder");
  cmd->add_option("--embed-timeout-ms", f.timeout_ms)->capture_default_str();
}

void add_gen_flags(CLI::App* cmd, GenFlags& f) {
  cmd->add_option("--backend", f.backend, "stub | remote")->capture_default_str();
  cmd->add_option("--endpoint", f.endpoint, "URL of a remote generator");
  cmd->add_option("--max-answer-tokens", f.max_answer_tokens)->capture_default_str();
  cmd->add_option("--timeout-ms", f.timeout_ms)->capture_default_str();
}

struct Loaded {
  std::shared_ptr<const VectorIndex> index;
  std::shared_ptr<const PassageStore> store;
};

Loaded load_indexed(const std::string& path) {
  Loaded l;
  l.index = std::make_shared<const VectorIndex>(vindex::load_index(path));
  l.store = std::make_shared<const PassageStore>(PassageStore::load(PassageStore::sidecar_for(path)));
  return l;
}

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string corpus, out;
  int dims = 256, max_tokens = 128, overlap = 32;
  EmbedFlags embed;
};

int cmd_ingest(const IngestArgs& a, bool as_json, std::ostream& out) {
  const auto docs = corpus::load_corpus(a.corpus);
  const auto passages = corpus::chunk_all(docs, {a.max_tokens, a.overlap});
  const EmbedderConfig ecfg = a.embed.config(a.dims);
  std::vector<std::string> texts;
  texts.reserve(passages.size());
  for (const auto& p : passages) texts.push_back(p.text);
  const auto vecs = embed::embed_batch(ecfg, texts);

  VectorIndex index(a.dims);
  for (std::size_t i = 0; i < passages.size(); ++i) index.add(passages[i].passage_id, vecs[i]);
  vindex::save_index(index, a.out);
  PassageStore(passages).save(PassageStore::sidecar_for(a.out));

  if (as_json) {
    out << json{{"documents", docs.size()}, {"passages", passages.size()}, {"dims", a.dims}, {"index", a.out}}.dump()
        << '\n';
  } else {
    out << "ingested " << docs.size() << " documents into " << passages.size() << " passages -> " << a.out << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct AskArgs {
  std::string index, question;
  int k = 5;
  double threshold = 0.40;
  EmbedFlags embed;
  GenFlags gen;
};

int cmd_ask(const AskArgs& a, bool as_json, std::ostream& out) {
  const GeneratorConfig gcfg = a.gen.config();
  const auto loaded = load_indexed(a.index);
  const EmbedderConfig ecfg = a.embed.config(loaded.index->dims());
  GroundingConfig grounding;
  grounding.k = a.k;
  grounding.support_threshold = a.threshold;
  const Pipeline pipeline({ecfg, gcfg, grounding}, loaded.index, loaded.store);
  const GroundedAnswer ans = pipeline.answer(a.question);

  if (as_json) {
    json j = {{"answer", ans.answer_text},
              {"citations", ans.citations},
              {"dangling_citations", ans.dangling_citations},
              {"attribution_present", ans.attribution_present},
              {"unsupported_rate", ans.unsupported_rate},
              {"contexts_in_prompt", ans.prompt.contexts.size()}};
    json sources = json::array();
    for (std::size_t i = 0; i < ans.retrieved.size(); ++i) {
      sources.push_back({{"marker", "[" + std::to_string(i + 1) + "]"},
                         {"passage_id", ans.retrieved[i].passage.passage_id},
                         {"score", ans.retrieved[i].score}});
    }
    j["sources"] = sources;
    j["latency_breakdown"] = {{"embed_ms", ans.latency.embed_ms},
                              {"retrieve_ms", ans.latency.retrieve_ms},
                              {"generate_ms", ans.latency.generate_ms},
                              {"total_ms", ans.latency.total_ms}};
    out << j.dump() << '\n';
    return kOk;
  }
  out << ans.answer_text << "\n\nSources:\n";
  for (std::size_t i = 0; i < ans.retrieved.size(); ++i) {
    out << '[' << (i + 1) << "] " << ans.retrieved[i].passage.passage_id << '\n';
  }
  std::ostringstream rate;
  rate << std::fixed << std::setprecision(2) << ans.unsupported_rate;
  out << "\nunsupported_rate: " << rate.str() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string dataset, kind = "pubmedqa", index, out_path;
  int k = 5;
  double threshold = 0.40;
  bool zero_timings = false;
  EmbedFlags embed;
  GenFlags gen;
  int dims = 256;
};

int cmd_eval(const EvalArgs& a, bool as_json, std::ostream& out) {
  const auto kind = eval::parse_dataset_kind(a.kind);
  const GeneratorConfig gcfg = a.gen.config();
  const auto examples = eval::load_dataset(a.dataset, kind);
  if (examples.empty()) throw Error(Errc::invalid_argument, "dataset " + a.dataset + " has no examples");

  eval::EvalOptions opts;
  opts.dataset_name = std::filesystem::path(a.dataset).stem().string();
  opts.zero_timings = a.zero_timings;
  int dims = a.dims;
  if (!a.index.empty()) {
    auto loaded = load_indexed(a.index);
    dims = loaded.index->dims();
    opts.index = loaded.index;
    opts.store = loaded.store;
  }
  GroundingConfig grounding;
  grounding.k = a.k;
  grounding.support_threshold = a.threshold;
  const auto run = eval::run_eval(examples, {a.embed.config(dims), gcfg, grounding}, opts);
  const std::string report = eval::to_json(run.report).dump(2);
  if (!a.out_path.empty()) {
    std::ofstream f(a.out_path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(Errc::io, "cannot write report " + a.out_path);
    f << report << '\n';
  }
  out << report << '\n';
  if (!as_json) out << '\n' << eval::render_table({run.report});
  return kOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string index, queries;
  int k = 5, trials = 50;
  EmbedFlags embed;
  GenFlags gen;
};

int cmd_bench(const BenchArgs& a, bool as_json, std::ostream& out) {
  if (a.trials < 1) throw Error(Errc::invalid_argument, "--trials must be >= 1");
  std::ifstream qf(a.queries);
  if (!qf) throw Error(Errc::io, "cannot open query file " + a.queries);
  std::vector<std::string> queries;
  for (std::string line; std::getline(qf, line);) {
    if (!text::trim(line).empty()) queries.emplace_back(text::trim(line));
  }
  if (queries.empty()) throw Error(Errc::invalid_argument, "query file " + a.queries + " is empty");

  const GeneratorConfig gcfg = a.gen.config();
  const auto loaded = load_indexed(a.index);
  GroundingConfig grounding;
  grounding.k = a.k;
  const Pipeline pipeline({a.embed.config(loaded.index->dims()), gcfg, grounding}, loaded.index, loaded.store);

  std::vector<double> embed_ms, retrieve_ms, generate_ms, total_ms;
  for (int t = 0; t < a.trials; ++t) {
    for (const auto& q : queries) {
      const auto ans = pipeline.answer(q);
      embed_ms.push_back(ans.latency.embed_ms);
      retrieve_ms.push_back(ans.latency.retrieve_ms);
      generate_ms.push_back(ans.latency.generate_ms);
      total_ms.push_back(ans.latency.total_ms);
    }
  }
  const std::pair<const char*, const std::vector<double>*> stages[] = {
      {"embed", &embed_ms}, {"retrieve", &retrieve_ms}, {"generate", &generate_ms}, {"total", &total_ms}};
  const std::size_t vec_bytes = loaded.index->vector_bytes();
  const std::size_t id_bytes = loaded.index->id_table_bytes();

  if (as_json) {
    json j = {{"entries", loaded.index->size()},
              {"dims", loaded.index->dims()},
              {"queries", queries.size()},
              {"trials", a.trials},
              {"footprint_bytes", {{"vectors", vec_bytes}, {"id_table", id_bytes}, {"total", vec_bytes + id_bytes}}}};
    for (const auto& [name, samples] : stages) {
      const auto s = eval::latency_stats(*samples);
      j["latency_ms"][name] = {{"mean", s.mean_ms}, {"p50", s.p50_ms}, {"p95", s.p95_ms}};
    }
    out << j.dump() << '\n';
    return kOk;
  }
  out << "index: " << loaded.index->size() << " entries x " << loaded.index->dims() << " dims; " << queries.size()
      << " queries x " << a.trials << " trials\n\n";
  out << std::left << std::setw(10) << "stage" << std::right << std::setw(12) << "mean (ms)" << std::setw(12)
      << "p50 (ms)" << std::setw(12) << "p95 (ms)" << '\n';
  out << std::fixed << std::setprecision(3);
  for (const auto& [name, samples] : stages) {
    const auto s = eval::latency_stats(*samples);
    out << std::left << std::setw(10) << name << std::right << std::setw(12) << s.mean_ms << std::setw(12) << s.p50_ms
        << std::setw(12) << s.p95_ms << '\n';
  }
  out << "\nfootprint: " << vec_bytes << " vector bytes + " << id_bytes << " id-table bytes = " << vec_bytes + id_bytes
      << " bytes\n";
  return kOk;
}

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::transport:
    case Errc::timeout:
    case Errc::empty_completion:
    case Errc::numeric: return kRuntimeFailure;
    default: return kUsageError;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Retrieval-augmented medical question answering"};
  app.name("medrag");
  app.require_subcommand(1);
  bool as_json = false;
  app.add_flag("--json", as_json, "machine-readable output");

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "chunk, embed and index a corpus");
  c_ingest->add_option("--corpus", ingest.corpus, "newline-delimited JSON documents")->required();
  c_ingest->add_option("--out", ingest.out, "index file to write")->required();
  c_ingest->add_option("--dims", ingest.dims)->capture_default_str();
  c_ingest->add_option("--max-tokens", ingest.max_tokens)->capture_default_str();
  c_ingest->add_option("--overlap", ingest.overlap)->capture_default_str();
  c_ingest->add_flag("--json", as_json);
  add_embed_flags(c_ingest, ingest.embed);

  AskArgs ask;
  auto* c_ask = app.add_subcommand("ask", "answer one question with citations");
  c_ask->add_option("--index", ask.index)->required();
  c_ask->add_option("--question", ask.question)->required();
  c_ask->add_option("--k", ask.k)->capture_default_str()->check(CLI::Range(1, 20));
  c_ask->add_option("--threshold", ask.threshold)->capture_default_str();
  c_ask->add_flag("--json", as_json);
  add_embed_flags(c_ask, ask.embed);
  add_gen_flags(c_ask, ask.gen);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "score a benchmark dataset");
  c_eval->add_option("--dataset", ev.dataset)->required();
  c_eval->add_option("--kind", ev.kind, "pubmedqa | medmcqa")->capture_default_str();
  c_eval->add_option("--index", ev.index, "corpus index (required for medmcqa)");
  c_eval->add_option("--k", ev.k)->capture_default_str()->check(CLI::Range(1, 20));
  c_eval->add_option("--threshold", ev.threshold)->capture_default_str();
  c_eval->add_option("--dims", ev.dims, "embedding dims when no --index is given")->capture_default_str();
  c_eval->add_option("--out", ev.out_path, "also write the report JSON here");
  c_eval->add_flag("--zero-timings", ev.zero_timings, "report latencies as zero (reproducible output)");
  c_eval->add_flag("--json", as_json);
  add_embed_flags(c_eval, ev.embed);
  add_gen_flags(c_eval, ev.gen);

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "latency per stage and index footprint");
  c_bench->add_option("--index", bench.index)->required();
  c_bench->add_option("--queries", bench.queries, "one question per line")->required();
  c_bench->add_option("--k", bench.k)->capture_default_str()->check(CLI::Range(1, 20));
  c_bench->add_option("--trials", bench.trials)->capture_default_str();
  c_bench->add_flag("--json", as_json);
  add_embed_flags(c_bench, bench.embed);
  add_gen_flags(c_bench, bench.gen);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "medrag: " << e.what() << '\n';
    return kUsageError;
  }

  try {
    if (*c_ingest) return cmd_ingest(ingest, as_json, out);
    if (*c_ask) return cmd_ask(ask, as_json, out);
    if (*c_eval) return cmd_eval(ev, as_json, out);
    if (*c_bench) return cmd_bench(bench, as_json, out);
  } catch (const StageError& e) {
    err << "medrag: [" << e.stage() << "] " << e.detail() << '\n';
    return exit_code_for(e.code());
  } catch (const Error& e) {
    err << "medrag: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "medrag: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kUsageError;
}

}  // namespace medrag::cli
