#pragma once

// Confusion matrices, per-class precision/recall/F1, per-persona refusal
// rates, emotion distributions and cross-model comparison tables.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "paudit/core.hpp"

namespace paudit {

// Terminal outcome of one (image, persona, task) cell.
struct CellOutcome {
  std::string image_id;
  Persona persona;
  TaskKind task = TaskKind::gender_detection;
  Outcome outcome;
};

// Label a prediction carries, if any ("female", "happy", ...).
std::optional<std::string> predicted_label(const Outcome& o);

// Half-up rounding to `decimals` places, robust to binary representation
// error (0.125 -> 0.13, 56.0317 -> 56.03).
double round_half_up(double value, int decimals);
std::string format_fixed(double value, int decimals);
// Two-decimal rendering; undefined metrics render as "/".
std::string render_metric(std::optional<double> value);

// ---------------------------------------------------------------------------
// Confusion matrix
// ---------------------------------------------------------------------------

enum class ExclusionPolicy {
  // Unanswered cells leave the matrix entirely (co-reported in `excluded`).
  exclude,
  // Unanswered cells also count as misses against the true class's recall.
  count_as_miss,
};

struct ExcludedCounts {
  std::uint64_t refused = 0;
  std::uint64_t malformed = 0;
  std::uint64_t transport_error = 0;
  std::uint64_t benchmark_undetermined = 0;
  std::uint64_t unlisted_prediction = 0;  // a label outside the class list

  std::uint64_t total() const {
    return refused + malformed + transport_error + benchmark_undetermined + unlisted_prediction;
  }
  bool operator==(const ExcludedCounts&) const = default;
};

class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<std::string> classes,
                           ExclusionPolicy policy = ExclusionPolicy::exclude);

  const std::vector<std::string>& classes() const { return classes_; }
  ExclusionPolicy policy() const { return policy_; }
  std::size_t size() const { return classes_.size(); }
  std::optional<std::size_t> index_of(std::string_view label) const;

  std::uint64_t at(std::size_t truth, std::size_t predicted) const {
    return counts_[truth * classes_.size() + predicted];
  }
  void add(std::size_t truth, std::size_t predicted, std::uint64_t n = 1);
  // Unanswered cell whose truth is a listed class.
  void add_miss(std::size_t truth, std::uint64_t n = 1);

  // Unanswered cells per true class; non-zero only under count_as_miss.
  std::uint64_t missed(std::size_t truth) const { return missed_[truth]; }
  std::uint64_t total_counted() const;

  ExcludedCounts excluded;
  // Evaluated image ids (those with a verdict), sorted.
  std::vector<std::string> evaluated_ids;
  // Predictions without a verdict; listed, not fatal.
  std::vector<std::string> missing_truth;

 private:
  std::vector<std::string> classes_;
  ExclusionPolicy policy_ = ExclusionPolicy::exclude;
  std::vector<std::uint64_t> counts_;
  std::vector<std::uint64_t> missed_;
};

struct Prediction {
  std::string image_id;
  Outcome outcome;
};

inline constexpr std::string_view kCannotDetermine = "cannot_determine";

// `truth` maps image id -> verdict label. Verdicts outside `classes`
// (notably cannot_determine) go to the benchmark_undetermined bucket.
ConfusionMatrix build_confusion(std::span<const Prediction> predictions,
                                const std::map<std::string, std::string>& truth,
                                std::vector<std::string> classes,
                                ExclusionPolicy policy = ExclusionPolicy::exclude);

std::vector<std::string> gender_classes();
std::vector<std::string> emotion_classes();

struct ClassMetrics {
  std::string label;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t support = 0;  // tp + fn
};

std::vector<ClassMetrics> class_metrics(const ConfusionMatrix& matrix);
// Mean F1 over classes, undefined F1 counted as 0.
double macro_f1(const ConfusionMatrix& matrix);

// ---------------------------------------------------------------------------
// Refusal rates
// ---------------------------------------------------------------------------

enum class DenominatorPolicy {
  all_items,            // every cell of the persona for the task
  excluding_transport,  // cells minus terminal transport errors
  fixed,                // a declared N (e.g. the confirmed single-face set)
};

struct Denominator {
  DenominatorPolicy policy = DenominatorPolicy::all_items;
  std::size_t fixed_total = 0;

  std::string tag() const;
  // "all", "excluding_transport" or a positive integer.
  static Denominator parse(std::string_view s);
};

struct PersonaRefusal {
  Persona persona;
  std::size_t cells = 0;
  std::size_t refusals = 0;
  std::size_t malformed = 0;
  std::size_t transport_errors = 0;
  std::size_t denominator = 0;
  double refusal_rate = 0.0;  // fraction; 0 when the denominator is 0
  double malformed_rate = 0.0;
};

struct RefusalReport {
  std::vector<TaskKind> tasks;
  Denominator denominator;
  std::vector<PersonaRefusal> rows;
  std::vector<std::string> notes;
};

RefusalReport refusal_rates(std::span<const CellOutcome> cells, std::span<const Persona> personas,
                            std::span<const TaskKind> tasks,
                            Denominator denominator = {});

// ---------------------------------------------------------------------------
// Emotion distributions
// ---------------------------------------------------------------------------

enum class GenderSource { model_classified, jury_benchmark };
enum class SharePolicy { all_items, answered_only };

std::string_view to_string(GenderSource s);
std::string_view to_string(SharePolicy s);

struct EmotionDistribution {
  Persona persona;
  GenderSource source = GenderSource::model_classified;
  GenderLabel gender = GenderLabel::female;
  SharePolicy policy = SharePolicy::all_items;
  std::size_t subset_size = 0;
  std::size_t answered = 0;
  std::array<std::size_t, 7> counts{};   // indexed by emotion code - 1
  std::array<double, 7> share_pct{};
  std::size_t residual = 0;              // refused, malformed, transport or missing
  double residual_pct = 0.0;             // 0 under answered_only
};

// Throws EmptySubset when the gender subset (or, under answered_only, the
// answered part of it) is empty. `jury_gender` maps image id -> verdict label
// and is required for GenderSource::jury_benchmark.
EmotionDistribution emotion_distribution(
    std::span<const CellOutcome> cells, GenderSource source, GenderLabel gender,
    const Persona& persona, SharePolicy policy,
    const std::map<std::string, std::string>* jury_gender = nullptr);

// ---------------------------------------------------------------------------
// Model comparison
// ---------------------------------------------------------------------------

struct ModelReport {
  std::string model;
  std::vector<std::string> evaluated_ids;
  std::vector<ClassMetrics> metrics;
};

ModelReport make_model_report(std::string model, const ConfusionMatrix& matrix);

struct ComparisonRow {
  std::string label;
  std::string metric;  // precision | recall | f1
  std::vector<std::optional<double>> values;  // one per model
  std::optional<std::string> winner;          // unique maximum, if any
};

struct ComparisonTable {
  std::vector<std::string> models;
  std::vector<ComparisonRow> rows;
  std::vector<std::string> notes;
};

// Throws AlignmentError unless every report covers the same verdict set.
ComparisonTable compare_models(std::span<const ModelReport> reports);

// Published or externally supplied figures to cross-check.
struct ReferenceRow {
  std::string model;
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Adds a note for every reference row whose printed F1 disagrees with the
// harmonic mean of its own P and R by more than `tolerance`.
void add_reference_notes(ComparisonTable& table, std::span<const ReferenceRow> references,
                         double tolerance = 0.01);

}  // namespace paudit
