#pragma once

// Human-jury benchmark: annotator profiles, annotation ingestion, the
// single-face review workflow and jury aggregation into verdicts.

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "paudit/core.hpp"
#include "paudit/voting.hpp"

namespace paudit {

enum class BenchmarkTask { gender, emotion, dominant_emotion, single_face };

std::string_view to_string(BenchmarkTask t);
std::optional<BenchmarkTask> benchmark_task_from_string(std::string_view s);

// Allowed labels in tie-break order (first wins a tie):
//   gender:      female, male, cannot_determine
//   emotion(s):  angry ... neutral, by numeric code
//   single_face: yes, no
const std::vector<std::string>& label_domain(BenchmarkTask t);

struct AnnotatorProfile {
  std::string annotator_id;
  std::string gender;  // self-identified, free vocabulary
  std::string race;
  double experience_years = 0.0;
  bool trained = false;
};

// CSV: annotator_id,gender,race,experience_years,trained
std::vector<AnnotatorProfile> load_profiles(const std::filesystem::path& path);
std::string profiles_to_csv(std::span<const AnnotatorProfile> profiles);

struct AnnotationRecord {
  std::string annotator_id;
  std::string image_id;
  BenchmarkTask task = BenchmarkTask::gender;
  std::string label;
  std::string timestamp;  // ISO-8601; later timestamps supersede earlier ones

  bool operator==(const AnnotationRecord&) const = default;
};

void to_json(json& j, const AnnotationRecord& r);
void from_json(const json& j, AnnotationRecord& r);

// Rejected row or request; the message names the offending field.
class RowError : public Error {
 public:
  using Error::Error;
};

// Single validation path for CSV rows and API submissions.
AnnotationRecord validate_annotation(std::string_view annotator_id, std::string_view image_id,
                                     std::string_view task, std::string_view label,
                                     std::string_view timestamp);

struct RowIssue {
  int line = 0;
  std::string message;
};

struct ImportResult {
  std::vector<AnnotationRecord> records;  // superseded, sorted
  std::vector<RowIssue> errors;
};

inline constexpr std::string_view kAnnotationHeader = "annotator_id,image_id,task,label,timestamp";

// Throws FormatError when the header is missing; bad rows are reported in
// `errors` and skipped.
ImportResult import_annotations(const std::filesystem::path& path);
ImportResult import_annotations_csv(std::string_view text);
std::string annotations_to_csv(std::span<const AnnotationRecord> records);

// One record per (annotator, image, task): latest timestamp wins, later
// input position breaks timestamp ties. Output sorted by image, task,
// annotator.
std::vector<AnnotationRecord> supersede(std::span<const AnnotationRecord> records);

// Append-only JSON-lines store shared by the CLI and the annotation API.
class AnnotationStore {
 public:
  explicit AnnotationStore(std::filesystem::path path);

  void append(const AnnotationRecord& record);
  void append(std::span<const AnnotationRecord> records);
  std::vector<AnnotationRecord> records() const;  // superseded view
  // Rewrites the log to its superseded view (write-temp-then-rename).
  void compact();
  const std::filesystem::path& path() const { return path_; }

 private:
  std::vector<AnnotationRecord> read_all() const;

  std::filesystem::path path_;
  mutable std::mutex mutex_;
};

// --- Single-face review -------------------------------------------------------

struct FaceDecision {
  std::string image_id;
  bool confirm = false;
};

struct FaceFunnel {
  std::size_t sampled = 0;
  std::size_t auto_flagged = 0;  // face_count == 1
  std::size_t confirmed = 0;
  std::size_t rejected = 0;
  std::size_t unreviewed = 0;
};

struct ReviewResult {
  std::vector<ImageItem> items;
  FaceFunnel funnel;
};

// Images awaiting review: auto-flagged (face_count == 1) and unreviewed.
std::vector<ImageItem> review_queue(std::span<const ImageItem> items);
FaceFunnel face_funnel(std::span<const ImageItem> items);

// Applies human decisions. Confirming an image whose face_count is not 1
// records a human override. Throws UnknownImage for decisions naming an
// image not in `items` and InvalidInput for images lacking face_count.
ReviewResult single_face_review(std::span<const ImageItem> items,
                                std::span<const FaceDecision> decisions);

// CSV: image_id,decision (confirm|reject)
std::vector<FaceDecision> load_face_decisions(const std::filesystem::path& path);

// --- Jury aggregation -------------------------------------------------------------

struct JuryVerdict {
  std::string image_id;
  BenchmarkTask task = BenchmarkTask::gender;
  std::string label;
  std::string method;
  double agreement = 0.0;
  bool tie = false;
  std::vector<std::string> contributors;
};

struct JuryInputs {
  std::span<const AnnotatorProfile> profiles;
  std::span<const CoderHistory> histories;  // coder_id == annotator_id
};

// Per-annotator weights for the policy. Throws MissingWeights when the
// policy needs a profile or history that is absent.
std::map<std::string, double> jury_weights(std::span<const std::string> annotator_ids,
                                           const WeightPolicy& policy, const JuryInputs& inputs);

std::vector<JuryVerdict> aggregate_jury(std::span<const AnnotationRecord> records,
                                        const WeightPolicy& policy,
                                        const JuryInputs& inputs = {});

// CSV: image_id,task,label,agreement,tie_flag,method
std::string verdicts_to_csv(std::span<const JuryVerdict> verdicts);
std::vector<JuryVerdict> load_verdicts(const std::filesystem::path& path);

// image id -> label for one task.
std::map<std::string, std::string> verdict_map(std::span<const JuryVerdict> verdicts,
                                               BenchmarkTask task);

}  // namespace paudit
