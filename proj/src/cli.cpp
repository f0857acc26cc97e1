#include "paudit/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "paudit/audit.hpp"
#include "paudit/backends.hpp"
#include "paudit/benchmark.hpp"
#include "paudit/config.hpp"
#include "paudit/csv.hpp"
#include "paudit/report.hpp"
#include "paudit/service.hpp"

namespace paudit {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Options shared by most subcommands.
struct Common {
  std::string config;
  std::string work_dir;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "TOML or JSON run configuration");
  cmd->add_option("-w,--work-dir", c.work_dir, "work directory (overrides the config)");
}

Config resolve_config(const Common& c, bool required) {
  Config cfg;
  if (!c.config.empty()) {
    cfg = load_config(c.config);
  } else if (required) {
    throw UsageError("--config is required");
  } else {
    cfg = default_config(std::filesystem::current_path());
  }
  if (!c.work_dir.empty()) {
    const bool default_store = cfg.annotations == cfg.work_dir / "annotations.jsonl";
    cfg.work_dir = c.work_dir;
    if (default_store) cfg.annotations = cfg.work_dir / "annotations.jsonl";
  }
  return cfg;
}

RefusalPatternSet patterns_for(const Config& cfg) {
  return cfg.refusal_patterns.empty() ? RefusalPatternSet::defaults() : RefusalPatternSet::load(cfg.refusal_patterns);
}

void write_or_print(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_file_atomic(path, text);
  }
}

std::string funnel_line(const FaceFunnel& f) {
  return "sampled " + std::to_string(f.sampled) + ", auto-flagged " + std::to_string(f.auto_flagged) +
         ", confirmed " + std::to_string(f.confirmed) + ", rejected " + std::to_string(f.rejected) +
         ", unreviewed " + std::to_string(f.unreviewed);
}

// --- ingest -----------------------------------------------------------------------------

struct IngestArgs {
  std::string images;
  std::string out;
  std::string topic;
};

int cmd_ingest(const IngestArgs& a, std::ostream& out) {
  const std::filesystem::path dir(a.images);
  if (!std::filesystem::is_directory(dir)) throw ConfigError("not a directory: " + a.images);
  const std::filesystem::path manifest = a.out.empty() ? dir.parent_path() / "manifest.jsonl" : std::filesystem::path(a.out);
  std::map<std::string, ImageItem> previous;
  if (std::filesystem::exists(manifest)) {
    for (auto& item : load_manifest(manifest)) previous[item.id] = item;
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".gif" || ext == ".webp") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  const auto base = std::filesystem::absolute(manifest).parent_path();
  std::vector<ImageItem> items;
  std::set<std::string> ids;
  std::size_t kept = 0;
  for (const auto& f : files) {
    ImageItem item;
    item.id = std::filesystem::relative(f, dir).replace_extension().generic_string();
    std::replace(item.id.begin(), item.id.end(), '/', '_');
    if (!ids.insert(item.id).second) throw InvalidInput("duplicate image id '" + item.id + "' from " + f.string());
    item.uri = std::filesystem::relative(std::filesystem::absolute(f), base).generic_string();
    item.content_hash = content_hash(read_file_bytes(f));
    item.topic = a.topic;
    const auto it = previous.find(item.id);
    if (it != previous.end() && it->second.content_hash == item.content_hash) {
      item = it->second;  // keep face counts and review state
      ++kept;
    }
    items.push_back(std::move(item));
  }
  save_manifest(manifest, items);
  out << "ingested " << items.size() << " images (" << kept << " unchanged) -> " << manifest.string() << "\n";
  return 0;
}

// --- faces ------------------------------------------------------------------------------

struct FacesArgs {
  Common common;
  std::string backend;
  std::string manifest;
  std::string queue;
  std::string decisions;
  bool all = false;
};

std::filesystem::path manifest_for(const FacesArgs& a, const Config& cfg) {
  if (!a.manifest.empty()) return a.manifest;
  if (cfg.dataset.empty()) throw UsageError("--manifest or a config with 'dataset' is required");
  return cfg.dataset;
}

int cmd_faces_detect(const FacesArgs& a, std::ostream& out) {
  const auto cfg = resolve_config(a.common, true);
  const auto manifest = manifest_for(a, cfg);
  const auto id = a.backend.empty() ? cfg.default_backend : a.backend;
  if (id.empty()) throw UsageError("--backend is required");
  auto backend = make_backend(cfg.backend(id));
  auto items = load_manifest(manifest);
  const auto root = manifest.parent_path();
  std::size_t detected = 0;
  for (auto& item : items) {
    if (item.face_count && !a.all) continue;
    std::filesystem::path p(item.uri);
    if (p.is_relative()) p = root / p;
    item.face_count = backend->detect_faces(item.id, p);
    ++detected;
  }
  save_manifest(manifest, items);
  const auto queue = review_queue(items);
  std::string csv_text = "image_id,face_count,uri\n";
  for (const auto& item : queue) {
    csv_text += csv::join({item.id, std::to_string(item.face_count.value_or(0)), item.uri}) + "\n";
  }
  const std::filesystem::path queue_path = a.queue.empty() ? cfg.work_dir / "face_review_queue.csv" : std::filesystem::path(a.queue);
  write_file_atomic(queue_path, csv_text);
  out << "detected faces on " << detected << " images; " << queue.size() << " awaiting review -> "
      << queue_path.string() << "\n"
      << funnel_line(face_funnel(items)) << "\n";
  return 0;
}

int cmd_faces_review(const FacesArgs& a, std::ostream& out) {
  const auto cfg = resolve_config(a.common, false);
  const auto manifest = manifest_for(a, cfg);
  const auto items = load_manifest(manifest);
  const auto decisions = load_face_decisions(a.decisions);
  const auto result = single_face_review(items, decisions);
  save_manifest(manifest, result.items);
  out << funnel_line(result.funnel) << "\n";
  return 0;
}

// --- serve ------------------------------------------------------------------------------

struct ServeArgs {
  Common common;
  std::string host;
  int port = -1;
  std::string static_dir;
};

AnnotationService* g_service = nullptr;

int cmd_serve(const ServeArgs& a, std::ostream& out) {
  const auto cfg = resolve_config(a.common, true);
  ServiceOptions opt;
  opt.manifest = cfg.dataset;
  opt.store = cfg.annotations;
  opt.profiles = cfg.profiles;
  opt.static_dir = a.static_dir.empty() ? cfg.service.static_dir : std::filesystem::path(a.static_dir);
  opt.weights = cfg.weights;
  if (opt.store.has_parent_path()) std::filesystem::create_directories(opt.store.parent_path());
  AnnotationService service(opt);
  const auto host = a.host.empty() ? cfg.service.host : a.host;
  const int port = service.start(host, a.port >= 0 ? a.port : cfg.service.port);
  out << "serving annotations on http://" << host << ":" << port << "\n" << std::flush;
  g_service = &service;
  auto handler = [](int) {
    if (g_service) g_service->stop();
  };
  std::signal(SIGINT, handler);
  std::signal(SIGTERM, handler);
  service.wait();
  g_service = nullptr;
  return 0;
}

// --- annotations / jury ------------------------------------------------------------------

struct AnnotationArgs {
  Common common;
  std::string store;
  std::string csv;
  std::string out;
  bool compact = false;
};

std::filesystem::path store_for(const AnnotationArgs& a) {
  if (!a.store.empty()) return a.store;
  return resolve_config(a.common, false).annotations;
}

int cmd_annotations_import(const AnnotationArgs& a, std::ostream& out, std::ostream& err) {
  const auto result = import_annotations(a.csv);
  AnnotationStore store(store_for(a));
  if (store.path().has_parent_path()) std::filesystem::create_directories(store.path().parent_path());
  store.append(result.records);
  if (a.compact) store.compact();
  for (const auto& issue : result.errors) err << a.csv << ":" << issue.line << ": " << issue.message << "\n";
  out << "imported " << result.records.size() << " records, rejected " << result.errors.size() << " rows\n";
  return result.errors.empty() ? 0 : 1;
}

int cmd_annotations_export(const AnnotationArgs& a, std::ostream& out) {
  AnnotationStore store(store_for(a));
  write_or_print(a.out, annotations_to_csv(store.records()), out);
  return 0;
}

struct JuryArgs {
  Common common;
  std::string store;
  std::string scheme;
  double alpha = -1.0;
  double epsilon = -1.0;
  std::string profiles;
  std::string calibration;
  std::string calibration_task = "gender";
  std::string out;
};

// Each annotator's labels on the calibration verdicts become their history.
std::vector<CoderHistory> calibration_histories(const std::vector<AnnotationRecord>& records,
                                                const std::vector<JuryVerdict>& gold, BenchmarkTask task) {
  const auto truth = verdict_map(gold, task);
  const auto& domain = label_domain(task);
  std::map<std::string, ConfusionMatrix> by_coder;
  for (const auto& r : records) {
    if (r.task != task) continue;
    const auto t = truth.find(r.image_id);
    if (t == truth.end()) continue;
    auto [it, _] = by_coder.try_emplace(r.annotator_id, domain);
    const auto ti = it->second.index_of(t->second);
    const auto pi = it->second.index_of(r.label);
    if (ti && pi) it->second.add(*ti, *pi);
  }
  std::vector<CoderHistory> out;
  for (auto& [id, m] : by_coder) out.push_back({id, std::move(m)});
  return out;
}

int cmd_jury(const JuryArgs& a, std::ostream& out, std::ostream& err) {
  const auto cfg = resolve_config(a.common, false);
  WeightPolicy policy = cfg.weights;
  if (!a.scheme.empty()) policy.kind = weight_scheme_from_string(a.scheme);
  if (a.alpha >= 0.0) policy.alpha = a.alpha;
  if (a.epsilon >= 0.0) policy.epsilon = a.epsilon;
  policy.validate();

  AnnotationStore store(a.store.empty() ? cfg.annotations : std::filesystem::path(a.store));
  const auto records = store.records();
  const std::filesystem::path profile_path = a.profiles.empty() ? cfg.profiles : std::filesystem::path(a.profiles);
  std::vector<AnnotatorProfile> profiles;
  if (!profile_path.empty()) profiles = load_profiles(profile_path);
  std::vector<CoderHistory> histories;
  if (!a.calibration.empty()) {
    const auto task = benchmark_task_from_string(a.calibration_task);
    if (!task) throw UsageError("unknown calibration task '" + a.calibration_task + "'");
    histories = calibration_histories(records, load_verdicts(a.calibration), *task);
  }
  const JuryInputs inputs{profiles, histories};
  const auto verdicts = aggregate_jury(records, policy, inputs);

  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r.annotator_id);
  const std::vector<std::string> id_list(ids.begin(), ids.end());
  const auto weights = id_list.empty() ? std::map<std::string, double>{} : jury_weights(id_list, policy, inputs);
  std::ostringstream header;
  header << "weights (" << to_string(policy.kind) << "):";
  for (const auto& [id, w] : weights) header << " " << id << "=" << format_fixed(w, 4);
  err << header.str() << "\n";

  write_or_print(a.out, verdicts_to_csv(verdicts), out);
  if (!a.out.empty()) {
    std::size_t ties = 0;
    for (const auto& v : verdicts) ties += v.tie ? 1 : 0;
    out << verdicts.size() << " verdicts (" << ties << " tied) -> " << a.out << "\n";
  }
  return 0;
}

// --- audit ------------------------------------------------------------------------------

struct AuditArgs {
  Common common;
  std::string backend;
  std::string run_id;
  std::string resume;
  int parallelism = 0;
  std::string run;
  std::string strategy;
  int max_passes = 0;
  int min_improvement = -1;
  std::string task;
};

void print_stats(std::ostream& out, const RunResult& r, const std::filesystem::path& dir) {
  std::size_t cells = r.history.size();
  out << "run " << r.manifest.run_id << ": " << r.images << " images, " << cells << " cells, "
      << r.stats.cache_hits << " cache hits, " << r.stats.backend_invocations << " backend invocations, "
      << r.stats.replayed_from_log << " replayed\n"
      << "log: " << (dir / "responses.jsonl").string() << "\n";
}

int cmd_audit_run(const AuditArgs& a, std::ostream& out) {
  const auto cfg = resolve_config(a.common, true);
  RunManifest manifest = cfg.run;
  if (!a.backend.empty()) manifest.backend_id = a.backend;
  if (manifest.backend_id.empty()) throw ConfigError("no backend selected: set run.backend or pass --backend");
  bool resume = false;
  if (!a.resume.empty()) {
    manifest.run_id = a.resume;
    resume = true;
  }
  if (!a.run_id.empty()) manifest.run_id = a.run_id;
  if (a.parallelism > 0) manifest.parallelism = a.parallelism;
  auto backend = make_backend(cfg.backend(manifest.backend_id));
  AuditEngine engine(cfg.work_dir, {backend.get()}, patterns_for(cfg));
  const auto result = engine.run(manifest, resume);
  print_stats(out, result, engine.run_dir(manifest.run_id));
  return 0;
}

int cmd_audit_mitigate(const AuditArgs& a, std::ostream& out) {
  const auto cfg = resolve_config(a.common, true);
  const auto run_id = a.run.empty() ? cfg.run.run_id : a.run;
  const auto run = load_run(cfg.work_dir, run_id);
  MitigationConfig mc = cfg.mitigation;
  if (!a.strategy.empty()) mc.strategy = mitigation_strategy_from_string(a.strategy);
  if (a.max_passes > 0) mc.max_passes = a.max_passes;
  if (a.min_improvement >= 0) mc.min_improvement = a.min_improvement;
  if (!a.task.empty()) mc.task = task_from_string(a.task);
  mc.validate();
  auto backend = make_backend(cfg.backend(a.backend.empty() ? run.manifest.backend_id : a.backend));
  AuditEngine engine(cfg.work_dir, {backend.get()}, patterns_for(cfg));
  const auto result = engine.mitigate(run, mc);
  const auto& m = *result.mitigation;
  out << "mitigation " << to_string(mc.strategy) << " on " << run_id << ": refusals by pass";
  for (auto n : m.refusals_by_pass) out << " " << n;
  out << " (" << m.passes() << " passes)\n";
  return 0;
}

// --- metrics / report ------------------------------------------------------------------

struct MetricsArgs {
  Common common;
  std::string run;
  std::string denominator;
  std::string exclusion;
  std::string gender_source;
  std::string share_policy;
  std::vector<std::string> tasks;
  std::string verdicts;
  std::string reference;
  std::string format = "csv";
  std::string out;
  std::string out_dir;
  std::vector<std::string> compare;
};

MetricsOptions metrics_options(const MetricsArgs& a, const Config& cfg) {
  MetricsConfig mc = cfg.metrics;
  if (!a.denominator.empty()) mc.denominator = a.denominator;
  if (!a.exclusion.empty()) mc.exclusion = exclusion_policy_from_string(a.exclusion);
  if (!a.gender_source.empty()) mc.gender_source = gender_source_from_string(a.gender_source);
  if (!a.share_policy.empty()) mc.share_policy = share_policy_from_string(a.share_policy);
  if (!a.verdicts.empty()) mc.verdicts = a.verdicts;
  if (!a.reference.empty()) mc.reference = a.reference;
  auto opt = MetricsOptions::from(mc);
  if (!a.tasks.empty()) {
    opt.refusal_tasks.clear();
    for (const auto& t : a.tasks) opt.refusal_tasks.push_back(task_from_string(t));
  }
  opt.weights = cfg.weights;
  return opt;
}

int cmd_metrics(const MetricsArgs& a, std::ostream& out) {
  const auto cfg = resolve_config(a.common, false);
  const auto run = load_run(cfg.work_dir, a.run);
  const auto report = compute_metrics(run, metrics_options(a, cfg));
  std::string text;
  if (a.format == "csv") {
    text = refusals_csv(report.refusals);
  } else if (a.format == "emotions") {
    text = emotions_csv(report.emotions);
  } else if (a.format == "json") {
    text = metrics_to_json(report).dump(2) + "\n";
  } else if (a.format == "md") {
    text = tables_markdown(report);
  } else {
    throw UsageError("--format must be csv, emotions, json or md");
  }
  write_or_print(a.out, text, out);
  return 0;
}

int cmd_report(const MetricsArgs& a, std::ostream& out) {
  const auto cfg = resolve_config(a.common, false);
  const auto run = load_run(cfg.work_dir, a.run);
  const auto opt = metrics_options(a, cfg);
  const auto report = compute_metrics(run, opt);
  const std::filesystem::path report_dir = a.out_dir.empty() ? cfg.report_dir : std::filesystem::path(a.out_dir);
  const auto dir = emit_report(report_dir, a.run, report);
  out << "report -> " << dir.string() << "\n";

  if (!a.compare.empty()) {
    if (opt.verdicts.empty()) throw ConfigError("--compare needs jury verdicts (--verdicts or metrics.verdicts)");
    const auto truth = verdict_map(opt.verdicts, BenchmarkTask::gender);
    std::vector<ModelReport> reports;
    auto add = [&](const RunResult& r) {
      const auto preds = control_predictions(r, TaskKind::gender_detection);
      const auto matrix = build_confusion(preds, truth, gender_classes(), opt.exclusion);
      const auto name = r.backend.is_object() ? r.backend.value("backend_id", r.manifest.run_id) : r.manifest.run_id;
      reports.push_back(make_model_report(name, matrix));
    };
    add(run);
    for (const auto& id : a.compare) add(load_run(cfg.work_dir, id));
    auto table = compare_models(reports);
    add_reference_notes(table, opt.references);
    write_file_atomic(dir / "comparison.md", comparison_markdown(table));
    write_file_atomic(dir / "comparison.json", comparison_to_json(table).dump(2) + "\n");
    out << "comparison -> " << (dir / "comparison.md").string() << "\n";
  }
  return 0;
}

// --- wiring -----------------------------------------------------------------------------

void add_metric_options(CLI::App* cmd, MetricsArgs& m) {
  add_common(cmd, m.common);
  cmd->add_option("-r,--run", m.run, "run id")->required();
  cmd->add_option("--denominator", m.denominator, "all | excluding_transport | N");
  cmd->add_option("--exclusion", m.exclusion, "exclude | count_as_miss");
  cmd->add_option("--gender-source", m.gender_source, "model_classified | jury_benchmark");
  cmd->add_option("--share-policy", m.share_policy, "all_items | answered_only");
  cmd->add_option("--task", m.tasks, "refusal-rate task(s)");
  cmd->add_option("--verdicts", m.verdicts, "jury verdict CSV");
  cmd->add_option("--reference", m.reference, "reference figures JSON");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Persona-conditioned audit of vision-language classifiers"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "build a dataset manifest from an image directory");
  c_ingest->add_option("--images", ingest.images, "image directory")->required();
  c_ingest->add_option("-o,--out", ingest.out, "manifest path (default: <images>/../manifest.jsonl)");
  c_ingest->add_option("--topic", ingest.topic, "topic tag for every image");

  FacesArgs faces;
  auto* c_faces = app.add_subcommand("faces", "face counting and single-face review");
  c_faces->require_subcommand(1);
  auto* c_detect = c_faces->add_subcommand("detect", "run the face backend and emit the review queue");
  add_common(c_detect, faces.common);
  c_detect->add_option("--backend", faces.backend, "face backend id");
  c_detect->add_option("--manifest", faces.manifest, "dataset manifest (default: config dataset)");
  c_detect->add_option("--queue", faces.queue, "review queue CSV");
  c_detect->add_flag("--all", faces.all, "recount images that already have a face count");
  auto* c_review = c_faces->add_subcommand("review", "apply confirm/reject decisions");
  add_common(c_review, faces.common);
  c_review->add_option("--manifest", faces.manifest, "dataset manifest (default: config dataset)");
  c_review->add_option("--decisions", faces.decisions, "CSV image_id,decision")->required();

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "start the annotation API");
  add_common(c_serve, serve.common);
  c_serve->add_option("--host", serve.host, "bind address");
  c_serve->add_option("--port", serve.port, "port (0 picks a free one)");
  c_serve->add_option("--static", serve.static_dir, "UI asset directory");

  AnnotationArgs ann;
  auto* c_ann = app.add_subcommand("annotations", "annotation store");
  c_ann->require_subcommand(1);
  auto* c_import = c_ann->add_subcommand("import", "import a CSV of annotations");
  add_common(c_import, ann.common);
  c_import->add_option("--store", ann.store, "annotation store (JSON lines)");
  c_import->add_option("--csv", ann.csv, "annotator_id,image_id,task,label,timestamp")->required();
  c_import->add_flag("--compact", ann.compact, "rewrite the store to its superseded view");
  auto* c_export = c_ann->add_subcommand("export", "export the superseded annotations as CSV");
  add_common(c_export, ann.common);
  c_export->add_option("--store", ann.store, "annotation store (JSON lines)");
  c_export->add_option("-o,--out", ann.out, "output file (default: stdout)");

  JuryArgs jury;
  auto* c_jury = app.add_subcommand("jury", "jury verdicts");
  c_jury->require_subcommand(1);
  auto* c_agg = c_jury->add_subcommand("aggregate", "aggregate annotations into verdicts");
  add_common(c_agg, jury.common);
  c_agg->add_option("--store", jury.store, "annotation store (JSON lines)");
  c_agg->add_option("--scheme", jury.scheme, "majority | experience_weighted | performance_weighted | hybrid");
  c_agg->add_option("--alpha", jury.alpha, "hybrid mixing coefficient");
  c_agg->add_option("--epsilon", jury.epsilon, "performance floor");
  c_agg->add_option("--profiles", jury.profiles, "annotator profile CSV");
  c_agg->add_option("--calibration", jury.calibration, "gold verdict CSV for performance weights");
  c_agg->add_option("--calibration-task", jury.calibration_task, "task scored on the calibration set");
  c_agg->add_option("-o,--out", jury.out, "verdict CSV (default: stdout)");

  AuditArgs audit;
  auto* c_audit = app.add_subcommand("audit", "run and mitigate audits");
  c_audit->require_subcommand(1);
  auto* c_run = c_audit->add_subcommand("run", "run the persona x task matrix");
  add_common(c_run, audit.common);
  c_run->add_option("--backend", audit.backend, "backend id");
  c_run->add_option("--run-id", audit.run_id, "run id (default: run.run_id)");
  c_run->add_option("--resume", audit.resume, "resume the named run from its log");
  c_run->add_option("--parallelism", audit.parallelism, "in-flight request bound");
  auto* c_mit = c_audit->add_subcommand("mitigate", "resubmit refused cells");
  add_common(c_mit, audit.common);
  c_mit->add_option("-r,--run", audit.run, "run id (default: run.run_id)");
  c_mit->add_option("--backend", audit.backend, "backend id (default: the run's)");
  c_mit->add_option("--strategy", audit.strategy, "rerun | disclaimer | rerun_plus_disclaimer");
  c_mit->add_option("--max-passes", audit.max_passes, "pass cap, counting the initial state");
  c_mit->add_option("--min-improvement", audit.min_improvement, "stop below this many fewer refusals");
  c_mit->add_option("--task", audit.task, "task to mitigate");

  MetricsArgs metrics;
  auto* c_metrics = app.add_subcommand("metrics", "metrics over a run");
  c_metrics->require_subcommand(1);
  auto* c_compute = c_metrics->add_subcommand("compute", "print refusal rates (or other tables)");
  add_metric_options(c_compute, metrics);
  c_compute->add_option("--format", metrics.format, "csv | emotions | json | md");
  c_compute->add_option("-o,--out", metrics.out, "output file (default: stdout)");

  MetricsArgs report;
  auto* c_report = app.add_subcommand("report", "report files");
  c_report->require_subcommand(1);
  auto* c_emit = c_report->add_subcommand("emit", "write metrics.json, refusals.csv, emotions.csv, tables.md");
  add_metric_options(c_emit, report);
  c_emit->add_option("--out-dir", report.out_dir, "report root (default: report_dir)");
  c_emit->add_option("--compare", report.compare, "other run ids to compare on gender classification");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (c_ingest->parsed()) return cmd_ingest(ingest, out);
    if (c_detect->parsed()) return cmd_faces_detect(faces, out);
    if (c_review->parsed()) return cmd_faces_review(faces, out);
    if (c_serve->parsed()) return cmd_serve(serve, out);
    if (c_import->parsed()) return cmd_annotations_import(ann, out, err);
    if (c_export->parsed()) return cmd_annotations_export(ann, out);
    if (c_agg->parsed()) return cmd_jury(jury, out, err);
    if (c_run->parsed()) return cmd_audit_run(audit, out);
    if (c_mit->parsed()) return cmd_audit_mitigate(audit, out);
    if (c_compute->parsed()) return cmd_metrics(metrics, out);
    if (c_emit->parsed()) return cmd_report(report, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 2;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"paudit"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace paudit
