#include "paudit/report.hpp"

#include <atomic>
#include <fstream>
#include <set>
#include <sstream>

#include "paudit/csv.hpp"
#include "paudit/prompts.hpp"

namespace paudit {

namespace {

std::string pct(double fraction) { return format_fixed(100.0 * fraction, 2); }

std::string persona_label(const Persona& p) {
  if (p.is_control()) return "control";
  return std::string(to_string(p.race)) + " / " + std::string(to_string(p.gender_identity));
}

json matrix_json(const ConfusionMatrix& m) {
  json counts = json::array();
  for (std::size_t t = 0; t < m.size(); ++t) {
    json row = json::array();
    for (std::size_t p = 0; p < m.size(); ++p) row.push_back(m.at(t, p));
    counts.push_back(row);
  }
  json metrics = json::array();
  for (const auto& c : class_metrics(m)) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    metrics.push_back({{"label", c.label},
                       {"precision", opt(c.precision)},
                       {"recall", opt(c.recall)},
                       {"f1", opt(c.f1)},
                       {"tp", c.tp},
                       {"fp", c.fp},
                       {"fn", c.fn},
                       {"support", c.support}});
  }
  json missed = json::array();
  for (std::size_t t = 0; t < m.size(); ++t) missed.push_back(m.missed(t));
  return {{"classes", m.classes()},
          {"policy", to_string(m.policy())},
          {"counts", counts},
          {"missed", missed},
          {"excluded",
           {{"refused", m.excluded.refused},
            {"malformed", m.excluded.malformed},
            {"transport_error", m.excluded.transport_error},
            {"benchmark_undetermined", m.excluded.benchmark_undetermined},
            {"unlisted_prediction", m.excluded.unlisted_prediction}}},
          {"evaluated", m.evaluated_ids.size()},
          {"missing_truth", m.missing_truth},
          {"macro_f1", macro_f1(m)},
          {"metrics", metrics}};
}

std::string matrix_markdown(const std::string& title, const ConfusionMatrix& m) {
  std::ostringstream os;
  os << "## " << title << "\n\n";
  os << "| class | precision | recall | F1 | support |\n|---|---|---|---|---|\n";
  for (const auto& c : class_metrics(m)) {
    os << "| " << c.label << " | " << render_metric(c.precision) << " | " << render_metric(c.recall) << " | "
       << render_metric(c.f1) << " | " << c.support << " |\n";
  }
  os << "\nExcluded: " << m.excluded.refused << " refused, " << m.excluded.malformed << " malformed, "
     << m.excluded.transport_error << " transport errors, " << m.excluded.benchmark_undetermined
     << " undetermined by the jury (policy " << to_string(m.policy()) << ").\n\n";
  return os.str();
}

std::string mitigation_markdown(const MitigationReport& m) {
  std::ostringstream os;
  os << "## Mitigation (" << to_string(m.config.strategy) << ", " << to_string(m.config.task) << ")\n\n";
  os << "Refusals by pass:";
  for (auto n : m.refusals_by_pass) os << " " << n;
  os << "\n\n| persona | N | before % | after % | change (pp) | refusals by pass |\n|---|---|---|---|---|---|\n";
  for (const auto& p : m.personas) {
    if (p.refusals_by_pass.empty() || p.cells == 0) continue;
    const double n = static_cast<double>(p.cells);
    const double before = 100.0 * static_cast<double>(p.refusals_by_pass.front()) / n;
    const double after = 100.0 * static_cast<double>(p.refusals_by_pass.back()) / n;
    os << "| " << persona_label(p.persona) << " | " << p.cells << " | " << format_fixed(before, 2) << " | "
       << format_fixed(after, 2) << " | " << format_fixed(after - before, 2) << " |";
    for (std::size_t i = 0; i < p.refusals_by_pass.size(); ++i) os << " " << p.refusals_by_pass[i];
    os << " |\n";
  }
  os << "\n";
  return os.str();
}

bool run_has_task(const RunResult& run, TaskKind task) {
  for (const auto& [key, _] : run.history) {
    if (key.task == task) return true;
  }
  return false;
}

}  // namespace

MetricsOptions MetricsOptions::from(const MetricsConfig& config) {
  MetricsOptions o;
  o.denominator = Denominator::parse(config.denominator);
  o.exclusion = config.exclusion;
  o.gender_source = config.gender_source;
  o.share_policy = config.share_policy;
  if (!config.verdicts.empty()) o.verdicts = load_verdicts(config.verdicts);
  if (!config.reference.empty()) o.references = load_reference_rows(config.reference);
  return o;
}

std::vector<Prediction> control_predictions(const RunResult& run, TaskKind task) {
  std::vector<Prediction> out;
  for (const auto& [key, _] : run.history) {
    if (key.task != task || !key.persona.is_control()) continue;
    out.push_back({key.image_id, run.terminal(key).outcome});
  }
  return out;
}

MetricsReport compute_metrics(const RunResult& run, const MetricsOptions& options) {
  MetricsReport r;
  const auto cells = run.cell_outcomes();
  const auto& personas = run.manifest.personas;

  json weights = nullptr;
  if (options.weights) {
    weights = {{"scheme", to_string(options.weights->kind)},
               {"alpha", options.weights->alpha},
               {"epsilon", options.weights->epsilon}};
  }
  r.header = {{"run_id", run.manifest.run_id},
              {"backend", run.backend},
              {"template_version", kTemplateVersion},
              {"refusal_pattern_version", run.refusal_pattern_version},
              {"parse_mode", run.manifest.parse_mode == ParseMode::strict ? "strict" : "lenient"},
              {"disclaimer", run.manifest.disclaimer},
              {"images", run.images},
              {"excluded_unconfirmed", run.excluded_unconfirmed},
              {"denominator", options.denominator.tag()},
              {"exclusion", to_string(options.exclusion)},
              {"gender_source", to_string(options.gender_source)},
              {"share_policy", to_string(options.share_policy)},
              {"weights", weights}};
  if (run.manifest.parse_mode == ParseMode::lenient) {
    r.notes.push_back("Lenient parsing was enabled; these figures are exploratory and not comparable with strict runs.");
  }

  r.refusals = refusal_rates(cells, personas, options.refusal_tasks, options.denominator);

  std::map<std::string, std::string> jury_gender;
  std::map<std::string, std::string> jury_emotion;
  if (!options.verdicts.empty()) {
    jury_gender = verdict_map(options.verdicts, BenchmarkTask::gender);
    jury_emotion = verdict_map(options.verdicts, BenchmarkTask::emotion);
  }

  if (run_has_task(run, TaskKind::emotion_classification)) {
    std::set<Persona> with_emotion;
    for (const auto& c : cells) {
      if (c.task == TaskKind::emotion_classification) with_emotion.insert(c.persona);
    }
    for (const auto& p : personas) {
      if (!with_emotion.contains(p)) continue;
      for (auto g : {GenderLabel::female, GenderLabel::male}) {
        try {
          r.emotions.push_back(emotion_distribution(cells, options.gender_source, g, p, options.share_policy,
                                                    jury_gender.empty() ? nullptr : &jury_gender));
        } catch (const EmptySubset& e) {
          r.emotion_skipped.push_back(e.what());
        } catch (const InvalidInput& e) {
          r.emotion_skipped.push_back(e.what());
        }
      }
    }
  }

  if (!jury_gender.empty() && run_has_task(run, TaskKind::gender_detection)) {
    const auto preds = control_predictions(run, TaskKind::gender_detection);
    r.gender_confusion = build_confusion(preds, jury_gender, gender_classes(), options.exclusion);
  }
  if (!jury_emotion.empty() && run_has_task(run, TaskKind::emotion_classification)) {
    const auto preds = control_predictions(run, TaskKind::emotion_classification);
    r.emotion_confusion = build_confusion(preds, jury_emotion, emotion_classes(), options.exclusion);
  }

  r.mitigation = run.mitigation;

  if (!options.references.empty()) {
    ComparisonTable scratch;
    add_reference_notes(scratch, options.references);
    r.notes.insert(r.notes.end(), scratch.notes.begin(), scratch.notes.end());
  }
  return r;
}

std::string refusals_csv(const RefusalReport& report) {
  std::string out(kRefusalHeader);
  out += "\n";
  for (const auto& row : report.rows) {
    out += csv::join({std::string(to_string(row.persona.race)), std::string(to_string(row.persona.gender_identity)),
                      std::to_string(row.refusals), std::to_string(row.denominator), pct(row.refusal_rate),
                      std::to_string(row.malformed), pct(row.malformed_rate), std::to_string(row.transport_errors)});
    out += "\n";
  }
  return out;
}

std::string emotions_csv(const std::vector<EmotionDistribution>& rows) {
  std::vector<std::string> header{"race", "gender_identity", "gender_source", "gender", "policy", "subset_size",
                                  "answered"};
  for (auto e : kAllEmotions) header.push_back(std::string(to_string(e)) + "_pct");
  header.push_back("residual");
  header.push_back("residual_pct");
  std::string out = csv::join(header) + "\n";
  for (const auto& d : rows) {
    std::vector<std::string> f{std::string(to_string(d.persona.race)),
                               std::string(to_string(d.persona.gender_identity)),
                               std::string(to_string(d.source)),
                               std::string(to_string(d.gender)),
                               std::string(to_string(d.policy)),
                               std::to_string(d.subset_size),
                               std::to_string(d.answered)};
    for (double s : d.share_pct) f.push_back(format_fixed(s, 2));
    f.push_back(std::to_string(d.residual));
    f.push_back(format_fixed(d.residual_pct, 2));
    out += csv::join(f) + "\n";
  }
  return out;
}

json metrics_to_json(const MetricsReport& report) {
  json refusal_rows = json::array();
  for (const auto& row : report.refusals.rows) {
    refusal_rows.push_back({{"persona", row.persona.id()},
                            {"race", to_string(row.persona.race)},
                            {"gender_identity", to_string(row.persona.gender_identity)},
                            {"cells", row.cells},
                            {"refusals", row.refusals},
                            {"malformed", row.malformed},
                            {"transport_errors", row.transport_errors},
                            {"denominator", row.denominator},
                            {"refusal_rate", row.refusal_rate},
                            {"malformed_rate", row.malformed_rate}});
  }
  json tasks = json::array();
  for (auto t : report.refusals.tasks) tasks.push_back(to_string(t));

  json emotions = json::array();
  for (const auto& d : report.emotions) {
    json shares = json::object();
    json counts = json::object();
    for (std::size_t i = 0; i < kAllEmotions.size(); ++i) {
      shares[std::string(to_string(kAllEmotions[i]))] = d.share_pct[i];
      counts[std::string(to_string(kAllEmotions[i]))] = d.counts[i];
    }
    emotions.push_back({{"persona", d.persona.id()},
                        {"gender_source", to_string(d.source)},
                        {"gender", to_string(d.gender)},
                        {"policy", to_string(d.policy)},
                        {"subset_size", d.subset_size},
                        {"answered", d.answered},
                        {"counts", counts},
                        {"share_pct", shares},
                        {"residual", d.residual},
                        {"residual_pct", d.residual_pct}});
  }

  json out = {{"header", report.header},
              {"refusals",
               {{"tasks", tasks}, {"denominator", report.refusals.denominator.tag()}, {"rows", refusal_rows},
                {"notes", report.refusals.notes}}},
              {"emotions", emotions},
              {"emotion_skipped", report.emotion_skipped},
              {"notes", report.notes}};
  if (report.mitigation) out["mitigation"] = mitigation_to_json(*report.mitigation);
  if (report.gender_confusion) out["gender_confusion"] = matrix_json(*report.gender_confusion);
  if (report.emotion_confusion) out["emotion_confusion"] = matrix_json(*report.emotion_confusion);
  return out;
}

std::string tables_markdown(const MetricsReport& report) {
  std::ostringstream os;
  const auto& h = report.header;
  os << "# Audit report: " << h.value("run_id", std::string()) << "\n\n";
  if (h.contains("backend") && h["backend"].is_object()) {
    const auto& b = h["backend"];
    os << "- backend: " << b.value("backend_id", std::string()) << " (" << b.value("model_name", std::string())
       << ", temperature " << b.value("temperature", 0.0) << ")\n";
  }
  os << "- prompt template: " << h.value("template_version", std::string()) << "\n";
  os << "- refusal patterns: " << h.value("refusal_pattern_version", std::string()) << "\n";
  os << "- parse mode: " << h.value("parse_mode", std::string()) << "\n";
  os << "- denominator: " << h.value("denominator", std::string()) << "\n";
  os << "- exclusion policy: " << h.value("exclusion", std::string()) << "\n";
  os << "- emotion subsets: " << h.value("gender_source", std::string()) << ", "
     << h.value("share_policy", std::string()) << "\n";
  if (h.contains("weights") && h["weights"].is_object()) {
    os << "- jury weights: " << h["weights"].value("scheme", std::string()) << " (alpha "
       << h["weights"].value("alpha", 0.0) << ", epsilon " << h["weights"].value("epsilon", 0.0) << ")\n";
  }
  os << "\n## Refusal rates\n\n";
  os << "| persona | refusals | N | refusal % | malformed | malformed % | transport errors |\n";
  os << "|---|---|---|---|---|---|---|\n";
  for (const auto& row : report.refusals.rows) {
    os << "| " << persona_label(row.persona) << " | " << row.refusals << " | " << row.denominator << " | "
       << pct(row.refusal_rate) << " | " << row.malformed << " | " << pct(row.malformed_rate) << " | "
       << row.transport_errors << " |\n";
  }
  os << "\nRates use the declared denominator [1].\n\n";

  if (!report.emotions.empty()) {
    os << "## Emotion distributions (%)\n\n| persona | gender | n |";
    for (auto e : kAllEmotions) os << " " << to_string(e) << " |";
    os << " residual |\n|---|---|---|";
    for (std::size_t i = 0; i < kAllEmotions.size(); ++i) os << "---|";
    os << "---|\n";
    for (const auto& d : report.emotions) {
      os << "| " << persona_label(d.persona) << " | " << to_string(d.gender) << " | " << d.subset_size << " |";
      for (double s : d.share_pct) os << " " << format_fixed(s, 2) << " |";
      os << " " << format_fixed(d.residual_pct, 2) << " |\n";
    }
    os << "\n";
  }
  if (report.mitigation) os << mitigation_markdown(*report.mitigation);
  if (report.gender_confusion) os << matrix_markdown("Gender classification (control)", *report.gender_confusion);
  if (report.emotion_confusion) os << matrix_markdown("Emotion classification (control)", *report.emotion_confusion);

  os << "## Notes\n\n";
  int n = 1;
  for (const auto& note : report.refusals.notes) os << "[" << n++ << "] " << note << "\n\n";
  for (const auto& note : report.notes) os << "[" << n++ << "] " << note << "\n\n";
  for (const auto& s : report.emotion_skipped) os << "[" << n++ << "] Skipped: " << s << "\n\n";
  return os.str();
}

json comparison_to_json(const ComparisonTable& table) {
  json rows = json::array();
  for (const auto& row : table.rows) {
    json values = json::array();
    for (const auto& v : row.values) values.push_back(v ? json(*v) : json(nullptr));
    rows.push_back({{"label", row.label},
                    {"metric", row.metric},
                    {"values", values},
                    {"winner", row.winner ? json(*row.winner) : json(nullptr)}});
  }
  return {{"models", table.models}, {"rows", rows}, {"notes", table.notes}};
}

std::string comparison_markdown(const ComparisonTable& table) {
  std::ostringstream os;
  os << "| class | metric |";
  for (const auto& m : table.models) os << " " << m << " |";
  os << "\n|---|---|";
  for (std::size_t i = 0; i < table.models.size(); ++i) os << "---|";
  os << "\n";
  for (const auto& row : table.rows) {
    os << "| " << row.label << " | " << row.metric << " |";
    for (std::size_t i = 0; i < row.values.size(); ++i) {
      const auto cell = render_metric(row.values[i]);
      const bool best = row.winner && *row.winner == table.models[i];
      os << " " << (best ? "**" + cell + "**" : cell) << " |";
    }
    os << "\n";
  }
  if (!table.notes.empty()) {
    os << "\n## Notes\n\n";
    for (std::size_t i = 0; i < table.notes.size(); ++i) os << "[" << i + 1 << "] " << table.notes[i] << "\n\n";
  }
  return os.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  static std::atomic<std::uint64_t> counter{0};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp" + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::filesystem::path emit_report(const std::filesystem::path& report_dir, const std::string& run_id,
                                  const MetricsReport& report) {
  const auto dir = report_dir / run_id;
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "metrics.json", metrics_to_json(report).dump(2) + "\n");
  write_file_atomic(dir / "refusals.csv", refusals_csv(report.refusals));
  write_file_atomic(dir / "emotions.csv", emotions_csv(report.emotions));
  write_file_atomic(dir / "tables.md", tables_markdown(report));
  return dir;
}

std::vector<ReferenceRow> load_reference_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open reference file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (j.is_object() && j.contains("rows")) j = j["rows"];
  if (!j.is_array()) throw FormatError(path.string() + ": expected an array of reference rows");
  std::vector<ReferenceRow> out;
  for (const auto& e : j) {
    try {
      out.push_back({e.at("model").get<std::string>(), e.at("label").get<std::string>(),
                     e.at("precision").get<double>(), e.at("recall").get<double>(), e.at("f1").get<double>()});
    } catch (const json::exception& ex) {
      throw FormatError(path.string() + ": bad reference row: " + ex.what());
    }
  }
  return out;
}

}  // namespace paudit
