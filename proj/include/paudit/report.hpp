#pragma once

// Metrics over a finished run and the report directory:
//   <report_dir>/<run_id>/{metrics.json, refusals.csv, emotions.csv, tables.md}

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "paudit/audit.hpp"
#include "paudit/benchmark.hpp"
#include "paudit/config.hpp"
#include "paudit/metrics.hpp"

namespace paudit {

struct MetricsOptions {
  Denominator denominator;
  ExclusionPolicy exclusion = ExclusionPolicy::exclude;
  GenderSource gender_source = GenderSource::model_classified;
  SharePolicy share_policy = SharePolicy::all_items;
  // Refusal table task; reasoning runs may ask for the reasoning variants.
  std::vector<TaskKind> refusal_tasks{TaskKind::gender_detection};
  std::vector<JuryVerdict> verdicts;  // optional ground truth
  std::vector<ReferenceRow> references;
  std::optional<WeightPolicy> weights;  // echoed in the header

  static MetricsOptions from(const MetricsConfig& config);
};

struct MetricsReport {
  json header;
  RefusalReport refusals;
  std::vector<EmotionDistribution> emotions;
  std::vector<std::string> emotion_skipped;  // subsets that were empty
  // Control-persona predictions against jury verdicts, when verdicts exist.
  std::optional<ConfusionMatrix> gender_confusion;
  std::optional<ConfusionMatrix> emotion_confusion;
  std::optional<MitigationReport> mitigation;
  std::vector<std::string> notes;
};

MetricsReport compute_metrics(const RunResult& run, const MetricsOptions& options);

// Control-persona predictions of one task as confusion input.
std::vector<Prediction> control_predictions(const RunResult& run, TaskKind task);

inline constexpr std::string_view kRefusalHeader =
    "race,gender_identity,refusals,total,refusal_rate_pct,malformed,malformed_rate_pct,transport_errors";

std::string refusals_csv(const RefusalReport& report);
std::string emotions_csv(const std::vector<EmotionDistribution>& rows);
json metrics_to_json(const MetricsReport& report);
std::string tables_markdown(const MetricsReport& report);
std::string comparison_markdown(const ComparisonTable& table);
json comparison_to_json(const ComparisonTable& table);

// Writes the four report files; returns the directory.
std::filesystem::path emit_report(const std::filesystem::path& report_dir, const std::string& run_id,
                                  const MetricsReport& report);

// JSON: [{"model", "label", "precision", "recall", "f1"}, ...]
std::vector<ReferenceRow> load_reference_rows(const std::filesystem::path& path);

// Writes text to path via a temp file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace paudit
