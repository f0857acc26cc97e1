#pragma once

// Runs a dataset x persona x task grid against one backend with a
// content-addressed response cache, an append-only response log, resumption,
// and the two refusal-mitigation strategies.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "paudit/backends.hpp"
#include "paudit/metrics.hpp"
#include "paudit/parsing.hpp"

namespace paudit {

// Task families a run can request. gender_reasoning expands to the
// female/male/unknown follow-up chosen from the gender_detection outcome.
enum class AuditTask { gender_detection, gender_reasoning, emotion_classification };

std::string_view to_string(AuditTask t);
AuditTask audit_task_from_string(std::string_view s);

struct RunManifest {
  std::string run_id;
  std::filesystem::path dataset;  // JSON-lines ImageItem manifest
  std::string backend_id;
  std::vector<Persona> personas = enumerate_personas();
  std::vector<AuditTask> tasks{AuditTask::gender_detection};
  bool disclaimer = false;
  int parallelism = 4;
  std::uint64_t seed = 0;  // dispatch order only; results do not depend on it
  ParseMode parse_mode = ParseMode::strict;

  void validate() const;  // ConfigError
};

void to_json(json& j, const RunManifest& m);
void from_json(const json& j, RunManifest& m);

struct CellKey {
  std::string image_id;
  Persona persona;
  TaskKind task = TaskKind::gender_detection;
  auto operator<=>(const CellKey&) const = default;
};

// Deterministic digest of the cache coordinates.
std::string cache_key(std::string_view image_content_hash, std::string_view prompt_hash,
                      std::string_view backend_id, std::string_view model_name, int attempt_index);

struct CacheEntry {
  std::string key;
  std::string raw_text;
  double latency_ms = 0.0;
  std::string received_at;
  int transport_attempts = 1;
};

// Directory of <key>.json files. Reads are lock-free; writes go to a temp
// file and are renamed into place.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);
  // nullopt on miss; CacheError naming the key when the file is unreadable.
  std::optional<CacheEntry> get(const std::string& key) const;
  void put(const CacheEntry& entry) const;
  std::filesystem::path path_for(const std::string& key) const;

 private:
  std::filesystem::path dir_;
};

struct RunStats {
  std::size_t cache_hits = 0;
  std::size_t cache_misses = 0;
  std::size_t backend_invocations = 0;
  std::size_t replayed_from_log = 0;
  double wall_ms = 0.0;
};

struct MitigationPersonaRow {
  Persona persona;
  std::size_t cells = 0;
  std::vector<std::size_t> refusals_by_pass;  // pass 1 is the state before mitigation
};

enum class MitigationStrategy { rerun, disclaimer, rerun_plus_disclaimer };
std::string_view to_string(MitigationStrategy s);
MitigationStrategy mitigation_strategy_from_string(std::string_view s);

struct MitigationConfig {
  MitigationStrategy strategy = MitigationStrategy::rerun;
  int max_passes = 5;
  int min_improvement = 1;
  TaskKind task = TaskKind::gender_detection;

  void validate() const;  // ConfigError
};

struct MitigationReport {
  MitigationConfig config;
  std::vector<std::size_t> refusals_by_pass;  // totals; pass 1 is the starting state
  std::vector<MitigationPersonaRow> personas;
  std::size_t passes() const { return refusals_by_pass.size(); }
};

struct RunResult {
  RunManifest manifest;
  json backend;  // descriptor as recorded in the report header
  std::string refusal_pattern_version;
  std::size_t images = 0;
  std::size_t excluded_unconfirmed = 0;
  std::map<CellKey, std::vector<ModelResponse>> history;  // attempts in order
  RunStats stats;                                          // not part of the summary
  std::optional<MitigationReport> mitigation;

  // Latest non-transport-error response, else the latest response.
  const ModelResponse& terminal(const CellKey& key) const;
  std::size_t response_count() const;
  std::vector<CellOutcome> cell_outcomes() const;
  // Everything except timings and cache statistics; byte-stable across
  // identical runs.
  json summary() const;
};

std::string summary_text(const RunResult& result);  // pretty JSON + newline
json mitigation_to_json(const MitigationReport& report);

class AuditEngine {
 public:
  AuditEngine(std::filesystem::path work_dir, std::vector<Backend*> backends,
              RefusalPatternSet patterns = RefusalPatternSet::defaults());

  // With resume, responses already in the run's log are replayed and their
  // cells are not resubmitted. Without it the log is rewritten.
  RunResult run(const RunManifest& manifest, bool resume = false);
  RunResult mitigate(const RunResult& run, const MitigationConfig& config);

  std::filesystem::path run_dir(const std::string& run_id) const;
  const std::filesystem::path& work_dir() const { return work_dir_; }

 private:
  Backend& backend_for(const std::string& id) const;

  std::filesystem::path work_dir_;
  std::map<std::string, Backend*> backends_;
  RefusalPatternSet patterns_;
};

// Rebuilds a RunResult from runs/<run_id>/{manifest.json, responses.jsonl}.
RunResult load_run(const std::filesystem::path& work_dir, const std::string& run_id);

}  // namespace paudit
