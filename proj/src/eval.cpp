#include "medrag/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "medrag/error.hpp"
#include "medrag/text.hpp"

namespace medrag::eval {

using nlohmann::json;

DatasetKind parse_dataset_kind(std::string_view name) {
  if (name == "pubmedqa") return DatasetKind::pubmedqa;
  if (name == "medmcqa") return DatasetKind::medmcqa;
  throw Error(Errc::invalid_argument, "unknown dataset kind \"" + std::string(name) + "\"");
}

const char* to_string(DatasetKind kind) noexcept { return kind == DatasetKind::medmcqa ? "medmcqa" : "pubmedqa"; }

namespace {

bool valid_label(DatasetKind kind, std::string_view label) {
  if (kind == DatasetKind::pubmedqa) return label == "yes" || label == "no" || label == "maybe";
  return label == "A" || label == "B" || label == "C" || label == "D";
}

std::vector<std::string> string_array(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_array()) throw Error(Errc::parse, where + ": \"" + key + "\" must be an array");
  std::vector<std::string> out;
  for (const auto& v : *it) {
    if (!v.is_string()) throw Error(Errc::parse, where + ": \"" + key + "\" must hold strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::string required_string(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) throw Error(Errc::parse, where + ": missing string \"" + key + "\"");
  return it->get<std::string>();
}

}  // namespace

std::vector<QAExample> load_dataset(const std::filesystem::path& path, DatasetKind kind) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open dataset file " + path.string());
  std::vector<QAExample> out;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const std::string where = "dataset line " + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      throw Error(Errc::parse, where + ": invalid JSON");
    }
    if (!j.is_object()) throw Error(Errc::parse, where + ": record is not a JSON object");
    QAExample ex;
    ex.kind = kind;
    ex.id = required_string(j, "id", where);
    ex.question = required_string(j, "question", where);
    ex.gold = required_string(j, "gold", where);
    if (ex.id.empty()) throw Error(Errc::parse, where + ": empty id");
    if (kind == DatasetKind::pubmedqa) {
      ex.contexts = string_array(j, "contexts", where);
      if (ex.contexts.empty()) throw Error(Errc::parse, where + ": \"contexts\" is empty");
    } else {
      ex.options = string_array(j, "options", where);
      if (ex.options.size() != 4) {
        throw Error(Errc::parse, where + ": expected 4 options, found " + std::to_string(ex.options.size()));
      }
    }
    if (!valid_label(kind, ex.gold)) throw Error(Errc::parse, where + ": unknown label \"" + ex.gold + "\"");
    if (!ids.insert(ex.id).second) throw Error(Errc::duplicate, where + ": duplicate id \"" + ex.id + "\"");
    out.push_back(std::move(ex));
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, const std::vector<QAExample>& examples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write dataset file " + path.string());
  for (const auto& ex : examples) {
    json j = {{"id", ex.id}, {"question", ex.question}};
    if (ex.kind == DatasetKind::pubmedqa) {
      j["contexts"] = ex.contexts;
    } else {
      j["options"] = ex.options;
    }
    j["gold"] = ex.gold;
    out << j.dump() << '\n';
  }
}

std::string normalize_answer(std::string_view raw_text, DatasetKind kind, const std::vector<std::string>& options) {
  if (kind == DatasetKind::pubmedqa) {
    for (const auto& tok : text::alnum_tokens(raw_text)) {
      if (tok == "yes" || tok == "no" || tok == "maybe") return tok;
    }
    return std::string(kUnparseable);
  }
  auto is_alnum = [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
  };
  for (std::size_t i = 0; i < raw_text.size(); ++i) {
    const char c = raw_text[i];
    if (c < 'A' || c > 'D') continue;
    const bool left_ok = i == 0 || !is_alnum(raw_text[i - 1]);
    const bool right_ok = i + 1 == raw_text.size() || !is_alnum(raw_text[i + 1]);
    if (left_ok && right_ok) return std::string(1, c);
  }
  const std::string hay = text::to_lower(raw_text);
  int match = -1;
  for (std::size_t i = 0; i < options.size() && i < 4; ++i) {
    const std::string needle = text::to_lower(text::trim(options[i]));
    if (needle.empty() || hay.find(needle) == std::string::npos) continue;
    if (match >= 0) return std::string(kUnparseable);
    match = static_cast<int>(i);
  }
  if (match >= 0) return std::string(1, static_cast<char>('A' + match));
  return std::string(kUnparseable);
}

AccuracyResult score(const std::vector<Prediction>& preds, const std::vector<QAExample>& golds) {
  if (preds.empty()) throw Error(Errc::invalid_argument, "accuracy needs at least one prediction");
  if (preds.size() != golds.size()) {
    throw Error(Errc::invalid_argument, "accuracy: " + std::to_string(preds.size()) + " predictions for " +
                                            std::to_string(golds.size()) + " examples");
  }
  std::unordered_map<std::string, const QAExample*> by_id;
  for (const auto& g : golds) by_id.emplace(g.id, &g);
  // Reduce in id order so the result does not depend on evaluation order.
  std::vector<const Prediction*> sorted;
  for (const auto& p : preds) sorted.push_back(&p);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->example_id < b->example_id; });

  AccuracyResult r;
  r.n = preds.size();
  std::unordered_set<std::string> seen;
  for (const auto* p : sorted) {
    auto it = by_id.find(p->example_id);
    if (it == by_id.end() || !seen.insert(p->example_id).second) {
      throw Error(Errc::invalid_argument, "accuracy: prediction id \"" + p->example_id + "\" does not match");
    }
    if (p->normalized == kUnparseable) {
      ++r.unparseable;
    } else if (p->normalized == it->second->gold) {
      ++r.correct;
    }
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.n);
  return r;
}

double accuracy(const std::vector<Prediction>& preds, const std::vector<QAExample>& golds) {
  return score(preds, golds).accuracy;
}

double cohens_kappa(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw Error(Errc::invalid_argument, "kappa: annotation lists differ in length");
  if (a.empty()) throw Error(Errc::invalid_argument, "kappa: annotation lists are empty");
  const auto n = static_cast<double>(a.size());
  std::map<int, double> ca, cb;
  double agree = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca[a[i]] += 1.0;
    cb[b[i]] += 1.0;
    if (a[i] == b[i]) agree += 1.0;
  }
  const double po = agree / n;
  double pe = 0.0;
  for (const auto& [label, count] : ca) {
    auto it = cb.find(label);
    if (it != cb.end()) pe += (count / n) * (it->second / n);
  }
  if (pe == 1.0) return 1.0;
  return (po - pe) / (1.0 - pe);
}

double error_reduction(double base_rate, double treated_rate) {
  if (base_rate == 0.0) throw Error(Errc::invalid_argument, "error_reduction: base rate is zero");
  if (!(base_rate > 0.0 && base_rate <= 1.0)) throw Error(Errc::invalid_argument, "error_reduction: base rate outside (0, 1]");
  return (base_rate - treated_rate) / base_rate;
}

double attribution_rate(const std::vector<bool>& attribution_present) {
  if (attribution_present.empty()) throw Error(Errc::invalid_argument, "attribution_rate needs at least one answer");
  const auto hits = std::count(attribution_present.begin(), attribution_present.end(), true);
  return static_cast<double>(hits) / static_cast<double>(attribution_present.size());
}

double attribution_rate(const std::vector<GroundedAnswer>& answers) {
  std::vector<bool> flags;
  flags.reserve(answers.size());
  for (const auto& a : answers) flags.push_back(a.attribution_present);
  return attribution_rate(flags);
}

double nearest_rank(std::vector<double> samples, int percent) {
  if (samples.empty()) throw Error(Errc::invalid_argument, "percentile of an empty sample");
  if (percent < 0 || percent > 100) throw Error(Errc::invalid_argument, "percent must lie in [0, 100]");
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  std::size_t rank = (static_cast<std::size_t>(percent) * n + 99) / 100;
  rank = std::clamp<std::size_t>(rank, 1, n);
  return samples[rank - 1];
}

LatencyStats latency_stats(const std::vector<double>& samples_ms) {
  if (samples_ms.empty()) throw Error(Errc::invalid_argument, "latency_stats needs at least one sample");
  double sum = 0.0;
  for (double s : samples_ms) sum += s;
  return {sum / static_cast<double>(samples_ms.size()), nearest_rank(samples_ms, 50), nearest_rank(samples_ms, 95)};
}

json to_json(const EvalReport& r) {
  json j = {{"dataset", r.dataset},
            {"kind", to_string(r.kind)},
            {"backend", r.backend},
            {"k", r.k},
            {"n", r.n},
            {"correct", r.correct},
            {"accuracy", r.accuracy},
            {"attribution_rate", r.attribution_rate},
            {"mean_unsupported_rate", r.mean_unsupported_rate},
            {"unparseable_count", r.unparseable_count},
            {"latency", {{"mean_ms", r.latency.mean_ms}, {"p50_ms", r.latency.p50_ms}, {"p95_ms", r.latency.p95_ms}}}};
  j["kappa"] = r.kappa ? json(*r.kappa) : json(nullptr);
  j["memory_gb"] = r.memory_gb ? json(*r.memory_gb) : json(nullptr);
  return j;
}

EvalReport report_from_json(const json& j) {
  try {
    EvalReport r;
    r.dataset = j.at("dataset").get<std::string>();
    r.kind = parse_dataset_kind(j.at("kind").get<std::string>());
    r.backend = j.at("backend").get<std::string>();
    r.k = j.at("k").get<int>();
    r.n = j.at("n").get<std::size_t>();
    r.correct = j.at("correct").get<std::size_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.attribution_rate = j.at("attribution_rate").get<double>();
    r.mean_unsupported_rate = j.at("mean_unsupported_rate").get<double>();
    r.unparseable_count = j.at("unparseable_count").get<std::size_t>();
    const auto& lat = j.at("latency");
    r.latency = {lat.at("mean_ms").get<double>(), lat.at("p50_ms").get<double>(), lat.at("p95_ms").get<double>()};
    if (j.contains("kappa") && !j["kappa"].is_null()) r.kappa = j["kappa"].get<double>();
    if (j.contains("memory_gb") && !j["memory_gb"].is_null()) r.memory_gb = j["memory_gb"].get<double>();
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::parse, std::string("malformed eval report: ") + e.what());
  }
}

std::string render_table(const std::vector<EvalReport>& reports) {
  auto pct = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(1) << 100.0 * v;
    return s.str();
  };
  auto num = [](double v, int prec) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(prec) << v;
    return s.str();
  };
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"Model", "Setting", "Dataset", "Acc (%)", "Attribution (%)", "Unsupported (%)", "Unparseable",
                  "Mean (s)", "p50 (s)", "p95 (s)"});
  for (const auto& r : reports) {
    rows.push_back({r.backend, "RAG (k=" + std::to_string(r.k) + ")", r.dataset + " [" + to_string(r.kind) + "]",
                    pct(r.accuracy), pct(r.attribution_rate), pct(r.mean_unsupported_rate),
                    std::to_string(r.unparseable_count), num(r.latency.mean_ms / 1000.0, 3),
                    num(r.latency.p50_ms / 1000.0, 3), num(r.latency.p95_ms / 1000.0, 3)});
  }
  std::vector<std::size_t> width(rows.front().size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream out;
  auto rule = [&] {
    for (std::size_t c = 0; c < width.size(); ++c) out << std::string(width[c] + (c ? 3 : 0), '-');
    out << '\n';
  };
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      if (c) out << " | ";
      out << std::left << std::setw(static_cast<int>(width[c])) << rows[r][c];
    }
    out << '\n';
    if (r == 0) rule();
  }
  return out.str();
}

std::string question_text(const QAExample& ex) {
  if (ex.kind == DatasetKind::pubmedqa) return ex.question;
  std::string q = ex.question + " Options:";
  for (std::size_t i = 0; i < ex.options.size(); ++i) {
    q += " (";
    q.push_back(static_cast<char>('A' + i));
    q += ") " + ex.options[i];
  }
  return q;
}

namespace {

Pipeline context_pipeline(const QAExample& ex, const PipelineConfig& cfg, const ChunkOptions& chunking) {
  auto index = std::make_shared<VectorIndex>(cfg.embedder.dims);
  auto store = std::make_shared<PassageStore>();
  std::vector<Passage> passages;
  for (std::size_t i = 0; i < ex.contexts.size(); ++i) {
    if (text::trim(ex.contexts[i]).empty()) continue;
    Document doc{ex.id + "/ctx" + std::to_string(i), "", ex.contexts[i], "pubmedqa", std::nullopt};
    for (auto& p : corpus::chunk(doc, chunking)) passages.push_back(std::move(p));
  }
  std::vector<std::string> texts;
  for (const auto& p : passages) texts.push_back(p.text);
  const auto vecs = embed::embed_batch(cfg.embedder, texts);
  for (std::size_t i = 0; i < passages.size(); ++i) {
    index->add(passages[i].passage_id, vecs[i]);
    store->add(std::move(passages[i]));
  }
  return Pipeline(cfg, std::move(index), std::move(store));
}

}  // namespace

EvalRun run_eval(const std::vector<QAExample>& examples, const PipelineConfig& cfg, const EvalOptions& opts) {
  if (examples.empty()) throw Error(Errc::invalid_argument, "dataset is empty");
  const DatasetKind kind = examples.front().kind;
  for (const auto& ex : examples) {
    if (ex.kind != kind) throw Error(Errc::invalid_argument, "dataset mixes pubmedqa and medmcqa examples");
  }
  std::optional<Pipeline> shared;
  if (kind == DatasetKind::medmcqa) {
    if (!opts.index || !opts.store) throw Error(Errc::invalid_argument, "medmcqa evaluation needs a corpus index");
    shared.emplace(cfg, opts.index, opts.store);
  }

  EvalRun run;
  std::vector<double> latencies;
  std::vector<double> unsupported;
  std::vector<bool> attributed;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    Prediction pred;
    pred.example_id = ex.id;
    try {
      GroundedAnswer ans = kind == DatasetKind::pubmedqa
                               ? context_pipeline(ex, cfg, opts.chunking).answer(question_text(ex))
                               : shared->answer(question_text(ex));
      if (opts.zero_timings) ans.latency = {};
      pred.raw_text = ans.answer_text;
      pred.normalized = normalize_answer(ans.answer_text, kind, ex.options);
      latencies.push_back(ans.latency.total_ms);
      unsupported.push_back(ans.unsupported_rate);
      attributed.push_back(ans.attribution_present);
      pred.grounded = std::move(ans);
    } catch (const std::exception& e) {
      const auto* err = dynamic_cast<const Error*>(&e);
      throw Error(err ? err->code() : Errc::invalid_argument,
                  "evaluation aborted at example \"" + ex.id + "\" after " + std::to_string(i) + "/" +
                      std::to_string(examples.size()) + " completed: " + e.what());
    }
    run.predictions.push_back(std::move(pred));
  }

  const auto acc = score(run.predictions, examples);
  EvalReport& r = run.report;
  r.dataset = opts.dataset_name;
  r.kind = kind;
  r.backend = to_string(cfg.generator.kind);
  r.k = cfg.grounding.k;
  r.n = acc.n;
  r.correct = acc.correct;
  r.accuracy = acc.accuracy;
  r.unparseable_count = acc.unparseable;
  r.attribution_rate = attribution_rate(attributed);
  // Sum in id order so the mean is independent of evaluation order.
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return examples[a].id < examples[b].id; });
  double sum = 0.0;
  for (auto i : order) sum += unsupported[i];
  r.mean_unsupported_rate = sum / static_cast<double>(examples.size());
  r.latency = latency_stats(latencies);
  return run;
}

}  // namespace medrag::eval
