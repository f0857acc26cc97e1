#include "paudit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

namespace paudit {

std::optional<std::string> predicted_label(const Outcome& o) {
  if (const auto* g = std::get_if<GenderOutcome>(&o)) return std::string(to_string(g->label));
  if (const auto* e = std::get_if<EmotionOutcome>(&o)) return std::string(to_string(e->label));
  return std::nullopt;
}

double round_half_up(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  const double scaled = std::fabs(value) * scale;
  // Nudge by a relative epsilon so values like 0.125 that land just below the
  // midpoint in binary still round up.
  const double rounded = std::floor(scaled + 0.5 + 1e-9 * std::max(1.0, scaled)) / scale;
  return std::copysign(rounded, value);
}

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, round_half_up(value, decimals));
  return buf;
}

std::string render_metric(std::optional<double> value) {
  return value ? format_fixed(*value, 2) : std::string("/");
}

// --- ConfusionMatrix --------------------------------------------------------

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> classes, ExclusionPolicy policy)
    : classes_(std::move(classes)),
      policy_(policy),
      counts_(classes_.size() * classes_.size(), 0),
      missed_(classes_.size(), 0) {
  std::set<std::string> unique(classes_.begin(), classes_.end());
  if (unique.size() != classes_.size() || classes_.empty()) {
    throw InvalidInput("class list must be non-empty and unique");
  }
}

std::optional<std::size_t> ConfusionMatrix::index_of(std::string_view label) const {
  for (std::size_t i = 0; i < classes_.size(); ++i)
    if (classes_[i] == label) return i;
  return std::nullopt;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::uint64_t n) {
  counts_.at(truth * classes_.size() + predicted) += n;
}

void ConfusionMatrix::add_miss(std::size_t truth, std::uint64_t n) {
  if (policy_ == ExclusionPolicy::count_as_miss) missed_.at(truth) += n;
}

std::uint64_t ConfusionMatrix::total_counted() const {
  std::uint64_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

std::vector<std::string> gender_classes() { return {"female", "male"}; }

std::vector<std::string> emotion_classes() {
  std::vector<std::string> out;
  for (auto e : kAllEmotions) out.emplace_back(to_string(e));
  return out;
}

ConfusionMatrix build_confusion(std::span<const Prediction> predictions,
                                const std::map<std::string, std::string>& truth,
                                std::vector<std::string> classes, ExclusionPolicy policy) {
  ConfusionMatrix m(std::move(classes), policy);
  for (const auto& p : predictions) {
    const auto it = truth.find(p.image_id);
    if (it == truth.end()) {
      m.missing_truth.push_back(p.image_id);
      continue;
    }
    m.evaluated_ids.push_back(p.image_id);

    const auto t = m.index_of(it->second);
    if (!t) {
      ++m.excluded.benchmark_undetermined;
      continue;
    }
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, RefusalOutcome>) {
            ++m.excluded.refused;
            m.add_miss(*t);
          } else if constexpr (std::is_same_v<T, TransportErrorOutcome>) {
            ++m.excluded.transport_error;
            m.add_miss(*t);
          } else if constexpr (std::is_same_v<T, GenderOutcome> ||
                               std::is_same_v<T, EmotionOutcome>) {
            const auto pr = m.index_of(to_string(v.label));
            if (pr) {
              m.add(*t, *pr);
            } else {
              ++m.excluded.unlisted_prediction;
              m.add_miss(*t);
            }
          } else {
            // malformed, or a reasoning text where a label was expected
            ++m.excluded.malformed;
            m.add_miss(*t);
          }
        },
        p.outcome);
  }
  std::sort(m.evaluated_ids.begin(), m.evaluated_ids.end());
  return m;
}

std::vector<ClassMetrics> class_metrics(const ConfusionMatrix& matrix) {
  const auto n = matrix.size();
  std::vector<ClassMetrics> out;
  out.reserve(n);
  for (std::size_t c = 0; c < n; ++c) {
    ClassMetrics cm;
    cm.label = matrix.classes()[c];
    cm.tp = matrix.at(c, c);
    for (std::size_t o = 0; o < n; ++o) {
      if (o == c) continue;
      cm.fp += matrix.at(o, c);
      cm.fn += matrix.at(c, o);
    }
    cm.fn += matrix.missed(c);
    cm.support = cm.tp + cm.fn;
    if (cm.tp + cm.fp > 0) cm.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
    if (cm.support > 0) cm.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.support);
    if (cm.precision && cm.recall && (*cm.precision + *cm.recall) > 0.0) {
      cm.f1 = 2.0 * *cm.precision * *cm.recall / (*cm.precision + *cm.recall);
    }
    out.push_back(std::move(cm));
  }
  return out;
}

double macro_f1(const ConfusionMatrix& matrix) {
  const auto metrics = class_metrics(matrix);
  double sum = 0.0;
  for (const auto& m : metrics) sum += m.f1.value_or(0.0);
  return metrics.empty() ? 0.0 : sum / static_cast<double>(metrics.size());
}

// --- Refusal rates ------------------------------------------------------------

std::string Denominator::tag() const {
  switch (policy) {
    case DenominatorPolicy::all_items: return "all_items";
    case DenominatorPolicy::excluding_transport: return "excluding_transport";
    case DenominatorPolicy::fixed: return "fixed:" + std::to_string(fixed_total);
  }
  return "?";
}

Denominator Denominator::parse(std::string_view s) {
  if (s == "all" || s == "all_items") return {DenominatorPolicy::all_items, 0};
  if (s == "excluding_transport") return {DenominatorPolicy::excluding_transport, 0};
  if (s.starts_with("fixed:")) s.remove_prefix(6);
  std::size_t n = 0;
  for (char c : s) {
    if (c < '0' || c > '9') throw InvalidInput("bad denominator '" + std::string(s) + "'");
    n = n * 10 + static_cast<std::size_t>(c - '0');
  }
  if (s.empty() || n == 0) throw InvalidInput("bad denominator '" + std::string(s) + "'");
  return {DenominatorPolicy::fixed, n};
}

RefusalReport refusal_rates(std::span<const CellOutcome> cells, std::span<const Persona> personas,
                            std::span<const TaskKind> tasks, Denominator denominator) {
  RefusalReport report;
  report.tasks.assign(tasks.begin(), tasks.end());
  report.denominator = denominator;

  std::map<Persona, PersonaRefusal> by_persona;
  for (const auto& p : personas) by_persona[p].persona = p;

  for (const auto& cell : cells) {
    if (std::find(tasks.begin(), tasks.end(), cell.task) == tasks.end()) continue;
    auto it = by_persona.find(cell.persona);
    if (it == by_persona.end()) continue;
    auto& row = it->second;
    ++row.cells;
    switch (kind_of(cell.outcome)) {
      case OutcomeKind::refusal: ++row.refusals; break;
      case OutcomeKind::malformed: ++row.malformed; break;
      case OutcomeKind::transport_error: ++row.transport_errors; break;
      default: break;
    }
  }

  for (const auto& p : personas) {
    auto row = by_persona[p];
    switch (denominator.policy) {
      case DenominatorPolicy::all_items: row.denominator = row.cells; break;
      case DenominatorPolicy::excluding_transport:
        row.denominator = row.cells - row.transport_errors;
        break;
      case DenominatorPolicy::fixed: row.denominator = denominator.fixed_total; break;
    }
    if (row.denominator > 0) {
      row.refusal_rate = static_cast<double>(row.refusals) / static_cast<double>(row.denominator);
      row.malformed_rate = static_cast<double>(row.malformed) / static_cast<double>(row.denominator);
    }
    report.rows.push_back(row);
  }

  report.notes.push_back(
      "Every rate uses the single declared denominator policy '" + denominator.tag() +
      "'. Figures computed elsewhere with per-persona denominators (for example N-1 after "
      "dropping an unreadable item) differ by up to about 0.1 percentage points.");
  report.notes.push_back(
      "Refusal rates count only outputs matching the refusal pattern set; malformed answers are "
      "reported separately, so the refusal rate is a lower bound on non-answers.");
  std::size_t transport = 0;
  for (const auto& r : report.rows) transport += r.transport_errors;
  if (transport > 0) {
    report.notes.push_back(std::to_string(transport) +
                           " cells ended in transport errors and are not counted as refusals.");
  }
  return report;
}

// --- Emotion distributions ------------------------------------------------------

std::string_view to_string(GenderSource s) {
  return s == GenderSource::model_classified ? "model_classified" : "jury_benchmark";
}

std::string_view to_string(SharePolicy s) {
  return s == SharePolicy::all_items ? "all_items" : "answered_only";
}

EmotionDistribution emotion_distribution(std::span<const CellOutcome> cells, GenderSource source,
                                         GenderLabel gender, const Persona& persona,
                                         SharePolicy policy,
                                         const std::map<std::string, std::string>* jury_gender) {
  std::set<std::string> subset;
  if (source == GenderSource::model_classified) {
    for (const auto& c : cells) {
      if (c.persona != persona || c.task != TaskKind::gender_detection) continue;
      const auto* g = std::get_if<GenderOutcome>(&c.outcome);
      if (g && g->label == gender) subset.insert(c.image_id);
    }
  } else {
    if (jury_gender == nullptr) throw InvalidInput("jury_benchmark source requires jury verdicts");
    for (const auto& [image, label] : *jury_gender) {
      if (label == to_string(gender)) subset.insert(image);
    }
  }
  if (subset.empty()) {
    throw EmptySubset("no " + std::string(to_string(gender)) + " images for persona " +
                      persona.id() + " under " + std::string(to_string(source)));
  }

  EmotionDistribution d;
  d.persona = persona;
  d.source = source;
  d.gender = gender;
  d.policy = policy;
  d.subset_size = subset.size();

  std::set<std::string> seen;
  for (const auto& c : cells) {
    if (c.persona != persona || c.task != TaskKind::emotion_classification) continue;
    if (!subset.contains(c.image_id) || !seen.insert(c.image_id).second) continue;
    if (const auto* e = std::get_if<EmotionOutcome>(&c.outcome)) {
      ++d.counts[static_cast<std::size_t>(code(e->label) - 1)];
      ++d.answered;
    }
  }
  d.residual = d.subset_size - d.answered;

  const std::size_t denom = policy == SharePolicy::all_items ? d.subset_size : d.answered;
  if (denom == 0) {
    throw EmptySubset("no answered emotion cells for persona " + persona.id());
  }
  for (std::size_t i = 0; i < d.counts.size(); ++i) {
    d.share_pct[i] = 100.0 * static_cast<double>(d.counts[i]) / static_cast<double>(denom);
  }
  if (policy == SharePolicy::all_items) {
    d.residual_pct = 100.0 * static_cast<double>(d.residual) / static_cast<double>(denom);
  }
  return d;
}

// --- Model comparison ---------------------------------------------------------

ModelReport make_model_report(std::string model, const ConfusionMatrix& matrix) {
  return ModelReport{std::move(model), matrix.evaluated_ids, class_metrics(matrix)};
}

ComparisonTable compare_models(std::span<const ModelReport> reports) {
  if (reports.size() < 2) throw InvalidInput("compare_models needs at least two reports");
  for (const auto& r : reports) {
    if (r.evaluated_ids != reports.front().evaluated_ids) {
      throw AlignmentError("report '" + r.model + "' covers a different verdict set than '" +
                           reports.front().model + "'");
    }
  }

  ComparisonTable table;
  for (const auto& r : reports) table.models.push_back(r.model);

  std::vector<std::string> labels;
  for (const auto& r : reports)
    for (const auto& m : r.metrics)
      if (std::find(labels.begin(), labels.end(), m.label) == labels.end()) labels.push_back(m.label);

  using Getter = std::optional<double> ClassMetrics::*;
  const std::array<std::pair<const char*, Getter>, 3> metric_fields{{
      {"precision", &ClassMetrics::precision},
      {"recall", &ClassMetrics::recall},
      {"f1", &ClassMetrics::f1},
  }};

  for (const auto& label : labels) {
    for (const auto& [name, field] : metric_fields) {
      ComparisonRow row{label, name, {}, std::nullopt};
      for (const auto& r : reports) {
        const auto it = std::find_if(r.metrics.begin(), r.metrics.end(),
                                     [&](const ClassMetrics& m) { return m.label == label; });
        row.values.push_back(it == r.metrics.end() ? std::nullopt : (*it).*field);
      }
      std::optional<double> best;
      std::size_t best_count = 0;
      std::size_t best_index = 0;
      for (std::size_t i = 0; i < row.values.size(); ++i) {
        const auto& v = row.values[i];
        if (!v) continue;
        if (!best || *v > *best) {
          best = v;
          best_count = 1;
          best_index = i;
        } else if (*v == *best) {
          ++best_count;
        }
      }
      if (best && best_count == 1) row.winner = table.models[best_index];
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

void add_reference_notes(ComparisonTable& table, std::span<const ReferenceRow> references,
                         double tolerance) {
  for (const auto& ref : references) {
    const double sum = ref.precision + ref.recall;
    const double harmonic = sum > 0.0 ? 2.0 * ref.precision * ref.recall / sum : 0.0;
    if (std::fabs(harmonic - ref.f1) > tolerance) {
      table.notes.push_back("Reference F1 " + format_fixed(ref.f1, 2) + " for " + ref.model + " / " +
                            ref.label + " is inconsistent with its own precision " +
                            format_fixed(ref.precision, 2) + " and recall " +
                            format_fixed(ref.recall, 2) + " (harmonic mean " +
                            format_fixed(harmonic, 2) + "); computed values are reported as-is.");
    }
  }
}

}  // namespace paudit
