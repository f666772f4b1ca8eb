#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "medrag/pipeline.hpp"

namespace medrag::eval {

enum class DatasetKind { pubmedqa, medmcqa };

DatasetKind parse_dataset_kind(std::string_view name);
const char* to_string(DatasetKind kind) noexcept;

inline constexpr std::string_view kUnparseable = "UNPARSEABLE";

struct QAExample {
  std::string id;
  DatasetKind kind = DatasetKind::pubmedqa;
  std::string question;
  std::vector<std::string> contexts;  // pubmedqa
  std::vector<std::string> options;   // medmcqa, exactly four
  std::string gold;                   // yes|no|maybe, or A|B|C|D

  bool operator==(const QAExample&) const = default;
};

/// Newline-delimited JSON. pubmedqa: id, question, contexts[], gold.
/// medmcqa: id, question, options[4], gold. Errc::parse names the line.
std::vector<QAExample> load_dataset(const std::filesystem::path& path, DatasetKind kind);
void save_dataset(const std::filesystem::path& path, const std::vector<QAExample>& examples);

/// Total: returns a label or kUnparseable, never throws.
///  - pubmedqa: first whole word among yes/no/maybe, case-insensitive.
///  - medmcqa: first standalone capital A-D; otherwise the single option
///    whose text occurs in the answer (case-insensitive).
std::string normalize_answer(std::string_view raw_text, DatasetKind kind, const std::vector<std::string>& options = {});

struct Prediction {
  std::string example_id;
  std::string raw_text;
  std::string normalized;
  std::optional<GroundedAnswer> grounded;
};

struct AccuracyResult {
  std::size_t n = 0;
  std::size_t correct = 0;
  std::size_t unparseable = 0;
  double accuracy = 0.0;
};

/// Predictions and examples are matched by id (order-independent).
/// Unparseable predictions count as incorrect. Errc::invalid_argument on an
/// empty set or an id mismatch.
AccuracyResult score(const std::vector<Prediction>& preds, const std::vector<QAExample>& golds);
double accuracy(const std::vector<Prediction>& preds, const std::vector<QAExample>& golds);

/// Chance-corrected agreement (p_o - p_e) / (1 - p_e) with p_e from the
/// marginals. Defined as 1 when p_e == 1.
double cohens_kappa(const std::vector<int>& a, const std::vector<int>& b);

/// (base - treated) / base; negative when the treatment is worse.
double error_reduction(double base_rate, double treated_rate);

double attribution_rate(const std::vector<GroundedAnswer>& answers);
double attribution_rate(const std::vector<bool>& attribution_present);

struct LatencyStats {
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;

  bool operator==(const LatencyStats&) const = default;
};

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest sample.
double nearest_rank(std::vector<double> samples, int percent);
LatencyStats latency_stats(const std::vector<double>& samples_ms);

struct EvalReport {
  std::string dataset;
  DatasetKind kind = DatasetKind::pubmedqa;
  std::string backend;
  int k = 5;
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  double attribution_rate = 0.0;
  double mean_unsupported_rate = 0.0;
  std::size_t unparseable_count = 0;
  LatencyStats latency;
  std::optional<double> kappa;
  std::optional<double> memory_gb;  // externally supplied; never measured here

  bool operator==(const EvalReport&) const = default;
};

nlohmann::json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

/// Text table in the layout "Model | Setting | <Dataset> Acc (%)" followed by
/// grounding and latency columns, one row per report.
std::string render_table(const std::vector<EvalReport>& reports);

struct EvalOptions {
  std::string dataset_name = "dataset";
  ChunkOptions chunking;
  /// Report all latencies as zero so reports are byte-reproducible.
  bool zero_timings = false;
  /// Corpus for datasets without their own contexts (medmcqa).
  std::shared_ptr<const VectorIndex> index;
  std::shared_ptr<const PassageStore> store;
};

struct EvalRun {
  EvalReport report;
  std::vector<Prediction> predictions;  // dataset order
};

/// pubmedqa examples are answered over an index of their own contexts;
/// medmcqa examples use `opts.index`/`opts.store`. A failing example aborts
/// the run with an Error naming it and how many examples completed.
EvalRun run_eval(const std::vector<QAExample>& examples, const PipelineConfig& cfg, const EvalOptions& opts = {});

/// Question text sent to the pipeline (medmcqa appends the lettered options).
std::string question_text(const QAExample& ex);

}  // namespace medrag::eval
