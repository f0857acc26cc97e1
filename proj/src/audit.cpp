#include "paudit/audit.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <exception>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <unistd.h>

namespace paudit {

namespace {

std::string_view to_string(ParseMode m) { return m == ParseMode::strict ? "strict" : "lenient"; }

ParseMode parse_mode_from_string(std::string_view s) {
  if (s == "strict") return ParseMode::strict;
  if (s == "lenient") return ParseMode::lenient;
  throw ConfigError("unknown parse mode '" + std::string(s) + "'");
}

void write_atomic(const std::filesystem::path& path, const std::string& content) {
  static std::atomic<std::uint64_t> counter{0};
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    out.flush();
    if (!out) throw Error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Single writer fed by a queue.
class ResponseLog {
 public:
  ResponseLog(const std::filesystem::path& path, bool append)
      : out_(path, append ? std::ios::app : std::ios::trunc), thread_([this] { loop(); }) {
    if (!out_) throw Error("cannot open response log " + path.string());
  }
  ~ResponseLog() { close(); }

  void push(const ModelResponse& r) {
    auto line = json(r).dump();
    {
      std::lock_guard lock(mutex_);
      queue_.push_back(std::move(line));
    }
    cv_.notify_one();
  }

  void close() {
    {
      std::lock_guard lock(mutex_);
      if (done_) return;
      done_ = true;
    }
    cv_.notify_one();
    thread_.join();
    out_.flush();
  }

 private:
  void loop() {
    std::unique_lock lock(mutex_);
    while (true) {
      cv_.wait(lock, [&] { return done_ || !queue_.empty(); });
      auto batch = std::move(queue_);
      queue_.clear();
      const bool finished = done_;
      lock.unlock();
      for (const auto& line : batch) out_ << line << '\n';
      out_.flush();
      lock.lock();
      if (finished && queue_.empty()) return;
    }
  }

  std::ofstream out_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::vector<std::string> queue_;
  bool done_ = false;
  std::thread thread_;
};

template <typename Fn>
void parallel_for(std::size_t n, int parallelism, Fn fn) {
  if (n == 0) return;
  const auto workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, parallelism)));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    while (!failed) {
      const auto i = next++;
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t w = 1; w < workers; ++w) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

using ReplayKey = std::tuple<std::string, Persona, TaskKind, int, std::string>;

ReplayKey replay_key(const ModelResponse& r) {
  return {r.image_id, r.persona, r.task, r.attempt_index, r.prompt_variant};
}

// Valid log lines; a torn final line (interrupted write) is dropped.
std::vector<ModelResponse> read_log(const std::filesystem::path& path, bool tolerate_torn_tail) {
  std::vector<ModelResponse> out;
  std::ifstream in(path);
  if (!in) return out;
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(std::move(line));
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      out.push_back(json::parse(lines[i]).get<ModelResponse>());
    } catch (const std::exception& e) {
      if (tolerate_torn_tail && i + 1 == lines.size()) break;
      throw FormatError(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

void sort_history(std::map<CellKey, std::vector<ModelResponse>>& history) {
  for (auto& [k, v] : history) {
    std::stable_sort(v.begin(), v.end(), [](const ModelResponse& a, const ModelResponse& b) {
      return std::tie(a.attempt_index, a.prompt_variant) < std::tie(b.attempt_index, b.prompt_variant);
    });
  }
}

struct Dataset {
  std::vector<ImageItem> items;
  std::size_t excluded = 0;
  std::map<std::string, std::vector<std::uint8_t>> bytes;
  std::map<std::string, std::filesystem::path> paths;
};

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  Dataset d;
  if (!std::filesystem::exists(manifest_path)) {
    throw ConfigError("dataset manifest " + manifest_path.string() + " does not exist");
  }
  const auto base = manifest_path.parent_path();
  for (auto& item : load_manifest(manifest_path)) {
    if (item.single_face_validated != SingleFaceState::confirmed) {
      ++d.excluded;
      continue;
    }
    std::filesystem::path p = item.uri;
    if (p.is_relative()) p = base / p;
    auto bytes = read_file_bytes(p);
    if (content_hash(bytes) != item.content_hash) {
      throw InvalidImage("image '" + item.id + "' at " + p.string() + " does not match its content_hash");
    }
    d.paths[item.id] = p;
    d.bytes[item.id] = std::move(bytes);
    d.items.push_back(std::move(item));
  }
  std::sort(d.items.begin(), d.items.end(), [](const ImageItem& a, const ImageItem& b) { return a.id < b.id; });
  return d;
}

json meta_json(const RunResult& r) {
  return json{{"manifest", r.manifest},
              {"backend", r.backend},
              {"refusal_patterns", r.refusal_pattern_version},
              {"images", r.images},
              {"excluded_unconfirmed", r.excluded_unconfirmed}};
}

// Issues one request (or serves it from cache) and builds the response.
class Executor {
 public:
  Executor(Backend& backend, const ResponseCache& cache, const RefusalPatternSet& patterns, ParseMode mode,
           const Dataset& data, ResponseLog& log, RunStats& stats)
      : backend_(backend), cache_(cache), patterns_(patterns), mode_(mode), data_(data), log_(log), stats_(stats) {}

  ModelResponse execute(const std::string& image_id, const Persona& persona, TaskKind task, bool disclaimer,
                        int attempt) {
    const auto prompt = render_prompt({task, persona, disclaimer});
    ModelResponse r;
    r.image_id = image_id;
    r.persona = persona;
    r.task = task;
    r.backend_id = backend_.descriptor().backend_id;
    r.attempt_index = attempt;
    r.prompt_variant = disclaimer ? "disclaimer" : "base";
    r.prompt_hash = sha256_hex(prompt.text);

    const auto& bytes = data_.bytes.at(image_id);
    const auto image_hash = content_hash(bytes);
    const auto key = cache_key(image_hash, r.prompt_hash, r.backend_id, backend_.descriptor().model_name, attempt);
    if (const auto hit = cache_.get(key)) {
      ++hits_;
      r.raw_text = hit->raw_text;
      r.latency_ms = hit->latency_ms;
      r.received_at = hit->received_at;
    } else {
      ++misses_;
      BackendRequest req;
      req.image_id = image_id;
      req.image_path = data_.paths.at(image_id);
      req.image_bytes = bytes;
      req.content_hash = image_hash;
      req.prompt = prompt;
      req.attempt_index = attempt;
      const auto res = backend_.invoke(req);
      ++invocations_;
      r.latency_ms = res.latency_ms;
      r.received_at = utc_timestamp_now();
      if (!res.ok) {
        r.outcome = TransportErrorOutcome{res.error};
        log_.push(r);
        return r;
      }
      r.raw_text = res.raw_text;
      cache_.put({key, res.raw_text, res.latency_ms, r.received_at, res.transport_attempts});
    }
    r.outcome = parse_response(r.raw_text, task, patterns_, mode_);
    log_.push(r);
    return r;
  }

  void flush_stats() {
    stats_.cache_hits += hits_;
    stats_.cache_misses += misses_;
    stats_.backend_invocations += invocations_;
  }

 private:
  Backend& backend_;
  const ResponseCache& cache_;
  const RefusalPatternSet& patterns_;
  ParseMode mode_;
  const Dataset& data_;
  ResponseLog& log_;
  RunStats& stats_;
  std::atomic<std::size_t> hits_{0}, misses_{0}, invocations_{0};
};

}  // namespace

// --- Enumerations -------------------------------------------------------------

std::string_view to_string(AuditTask t) {
  switch (t) {
    case AuditTask::gender_detection: return "gender_detection";
    case AuditTask::gender_reasoning: return "gender_reasoning";
    case AuditTask::emotion_classification: return "emotion_classification";
  }
  return "?";
}

AuditTask audit_task_from_string(std::string_view s) {
  for (auto t : {AuditTask::gender_detection, AuditTask::gender_reasoning, AuditTask::emotion_classification}) {
    if (to_string(t) == s) return t;
  }
  throw ConfigError("unknown task '" + std::string(s) +
                    "' (expected gender_detection, gender_reasoning or emotion_classification)");
}

std::string_view to_string(MitigationStrategy s) {
  switch (s) {
    case MitigationStrategy::rerun: return "rerun";
    case MitigationStrategy::disclaimer: return "disclaimer";
    case MitigationStrategy::rerun_plus_disclaimer: return "rerun_plus_disclaimer";
  }
  return "?";
}

MitigationStrategy mitigation_strategy_from_string(std::string_view s) {
  for (auto m : {MitigationStrategy::rerun, MitigationStrategy::disclaimer, MitigationStrategy::rerun_plus_disclaimer}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown mitigation strategy '" + std::string(s) + "'");
}

void MitigationConfig::validate() const {
  if (max_passes < 1) throw ConfigError("mitigation.max_passes must be >= 1");
  if (min_improvement < 0) throw ConfigError("mitigation.min_improvement must be >= 0");
  if (task != TaskKind::gender_detection && task != TaskKind::emotion_classification) {
    throw ConfigError("mitigation.task must be gender_detection or emotion_classification");
  }
}

void RunManifest::validate() const {
  if (run_id.empty()) throw ConfigError("run_id must not be empty");
  if (run_id.find_first_of("/\\") != std::string::npos || run_id == "." || run_id == "..") {
    throw ConfigError("run_id '" + run_id + "' must be a plain name");
  }
  if (backend_id.empty()) throw ConfigError("backend_id must not be empty");
  if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (tasks.empty()) throw ConfigError("task set must not be empty");
  const bool has_detection = std::find(tasks.begin(), tasks.end(), AuditTask::gender_detection) != tasks.end();
  const bool has_reasoning = std::find(tasks.begin(), tasks.end(), AuditTask::gender_reasoning) != tasks.end();
  if (has_reasoning && !has_detection) throw ConfigError("gender_reasoning requires gender_detection");
  for (const auto& p : personas) {
    if (!p.valid()) throw ConfigError("invalid persona in persona set");
  }
}

void to_json(json& j, const RunManifest& m) {
  json personas = json::array(), tasks = json::array();
  for (const auto& p : m.personas) personas.push_back(p.id());
  for (auto t : m.tasks) tasks.push_back(to_string(t));
  j = json{{"run_id", m.run_id},           {"dataset", m.dataset.generic_string()},
           {"backend_id", m.backend_id},   {"personas", personas},
           {"tasks", tasks},               {"disclaimer", m.disclaimer},
           {"parallelism", m.parallelism}, {"seed", m.seed},
           {"parse_mode", to_string(m.parse_mode)}};
}

void from_json(const json& j, RunManifest& m) {
  m.run_id = j.at("run_id").get<std::string>();
  m.dataset = j.at("dataset").get<std::string>();
  m.backend_id = j.at("backend_id").get<std::string>();
  m.personas.clear();
  for (const auto& p : j.at("personas")) m.personas.push_back(Persona::from_id(p.get<std::string>()));
  m.tasks.clear();
  for (const auto& t : j.at("tasks")) m.tasks.push_back(audit_task_from_string(t.get<std::string>()));
  m.disclaimer = j.at("disclaimer").get<bool>();
  m.parallelism = j.at("parallelism").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.parse_mode = parse_mode_from_string(j.at("parse_mode").get<std::string>());
}

// --- Cache ----------------------------------------------------------------------

std::string cache_key(std::string_view image_content_hash, std::string_view prompt_hash,
                      std::string_view backend_id, std::string_view model_name, int attempt_index) {
  std::string material;
  for (auto part : {image_content_hash, prompt_hash, backend_id, model_name}) {
    material += std::to_string(part.size());
    material += ':';
    material += part;
    material += '\n';
  }
  material += std::to_string(attempt_index);
  return sha256_hex(material);
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path ResponseCache::path_for(const std::string& key) const {
  return dir_ / key.substr(0, 2) / (key + ".json");
}

std::optional<CacheEntry> ResponseCache::get(const std::string& key) const {
  const auto path = path_for(key);
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  try {
    const auto j = json::parse(in);
    CacheEntry e;
    e.key = j.at("key").get<std::string>();
    if (e.key != key) throw std::runtime_error("stored key " + e.key + " does not match file name");
    e.raw_text = j.at("raw_text").get<std::string>();
    e.latency_ms = j.at("latency_ms").get<double>();
    e.received_at = j.at("received_at").get<std::string>();
    e.transport_attempts = j.at("transport_attempts").get<int>();
    return e;
  } catch (const std::exception& ex) {
    throw CacheError(key, "corrupt cache entry " + path.string() + ": " + ex.what());
  }
}

void ResponseCache::put(const CacheEntry& e) const {
  const auto path = path_for(e.key);
  std::filesystem::create_directories(path.parent_path());
  const json j{{"key", e.key},
               {"raw_text", e.raw_text},
               {"latency_ms", e.latency_ms},
               {"received_at", e.received_at},
               {"transport_attempts", e.transport_attempts}};
  write_atomic(path, j.dump());
}

// --- RunResult -------------------------------------------------------------------

const ModelResponse& RunResult::terminal(const CellKey& key) const {
  const auto& v = history.at(key);
  for (auto it = v.rbegin(); it != v.rend(); ++it) {
    if (!is_transport_error(it->outcome)) return *it;
  }
  return v.back();
}

std::size_t RunResult::response_count() const {
  std::size_t n = 0;
  for (const auto& [k, v] : history) n += v.size();
  return n;
}

std::vector<CellOutcome> RunResult::cell_outcomes() const {
  std::vector<CellOutcome> out;
  out.reserve(history.size());
  for (const auto& [k, v] : history) out.push_back({k.image_id, k.persona, k.task, terminal(k).outcome});
  return out;
}

json RunResult::summary() const {
  json s;
  s["manifest"] = manifest;
  s["manifest"].erase("parallelism");
  s["backend"] = backend;
  s["template_version"] = kTemplateVersion;
  s["refusal_patterns"] = refusal_pattern_version;
  s["images"] = images;
  s["excluded_unconfirmed"] = excluded_unconfirmed;
  s["cells"] = history.size();
  s["responses"] = response_count();

  json outcomes = json::object();
  for (auto k : {OutcomeKind::gender, OutcomeKind::emotion, OutcomeKind::reasoning, OutcomeKind::refusal,
                 OutcomeKind::malformed, OutcomeKind::transport_error}) {
    outcomes[std::string(to_string(k))] = 0;
  }
  json per_persona = json::object();
  std::string canonical;
  for (const auto& [key, v] : history) {
    const auto& t = terminal(key);
    const auto kind = std::string(to_string(kind_of(t.outcome)));
    outcomes[kind] = outcomes[kind].get<std::size_t>() + 1;
    auto& row = per_persona[key.persona.id()][std::string(to_string(key.task))];
    if (row.is_null()) row = json{{"cells", 0}, {"refusals", 0}, {"malformed", 0}, {"transport_errors", 0}};
    row["cells"] = row["cells"].get<std::size_t>() + 1;
    if (is_refusal(t.outcome)) row["refusals"] = row["refusals"].get<std::size_t>() + 1;
    if (kind_of(t.outcome) == OutcomeKind::malformed) row["malformed"] = row["malformed"].get<std::size_t>() + 1;
    if (is_transport_error(t.outcome)) row["transport_errors"] = row["transport_errors"].get<std::size_t>() + 1;

    canonical += key.image_id + '\t' + key.persona.id() + '\t' + std::string(to_string(key.task));
    for (const auto& r : v) {
      json o = r.outcome;
      canonical += '\t' + std::to_string(r.attempt_index) + ':' + r.prompt_variant + ':' + r.prompt_hash + ':' +
                   sha256_hex(r.raw_text) + ':' + o.dump();
    }
    canonical += '\n';
  }
  s["outcomes"] = outcomes;
  s["per_persona"] = per_persona;
  s["digest"] = sha256_hex(canonical);
  if (mitigation) s["mitigation"] = mitigation_to_json(*mitigation);
  return s;
}

std::string summary_text(const RunResult& result) { return result.summary().dump(2) + "\n"; }

json mitigation_to_json(const MitigationReport& m) {
  json personas = json::array();
  for (const auto& p : m.personas) {
    personas.push_back({{"persona", p.persona.id()}, {"cells", p.cells}, {"refusals_by_pass", p.refusals_by_pass}});
  }
  return json{{"strategy", to_string(m.config.strategy)},
              {"task", to_string(m.config.task)},
              {"max_passes", m.config.max_passes},
              {"min_improvement", m.config.min_improvement},
              {"refusals_by_pass", m.refusals_by_pass},
              {"personas", personas}};
}

// --- Engine ---------------------------------------------------------------------------

AuditEngine::AuditEngine(std::filesystem::path work_dir, std::vector<Backend*> backends, RefusalPatternSet patterns)
    : work_dir_(std::move(work_dir)), patterns_(std::move(patterns)) {
  for (auto* b : backends) {
    if (!backends_.emplace(b->descriptor().backend_id, b).second) {
      throw ConfigError("duplicate backend_id '" + b->descriptor().backend_id + "'");
    }
  }
}

std::filesystem::path AuditEngine::run_dir(const std::string& run_id) const { return work_dir_ / "runs" / run_id; }

Backend& AuditEngine::backend_for(const std::string& id) const {
  const auto it = backends_.find(id);
  if (it == backends_.end()) throw ConfigError("backend '" + id + "' is not configured");
  return *it->second;
}

RunResult AuditEngine::run(const RunManifest& manifest, bool resume) {
  const auto start = std::chrono::steady_clock::now();
  manifest.validate();
  Backend& backend = backend_for(manifest.backend_id);
  const auto data = load_dataset(manifest.dataset);

  RunResult result;
  result.manifest = manifest;
  result.backend = backend.descriptor();
  result.refusal_pattern_version = patterns_.version();
  result.images = data.items.size();
  result.excluded_unconfirmed = data.excluded;

  const auto dir = run_dir(manifest.run_id);
  std::filesystem::create_directories(dir);
  const auto log_path = dir / "responses.jsonl";

  std::map<ReplayKey, ModelResponse> replay;
  if (resume) {
    if (!std::filesystem::exists(dir / "run.json")) {
      throw ConfigError("no run '" + manifest.run_id + "' to resume under " + work_dir_.string());
    }
    const auto logged = read_log(log_path, true);
    std::string clean;
    for (const auto& r : logged) {
      if (is_transport_error(r.outcome)) continue;  // retried on resume
      replay[replay_key(r)] = r;
      clean += json(r).dump() + '\n';
    }
    write_atomic(log_path, clean);
  }
  if (!resume) std::filesystem::remove(dir / "mitigation.json");
  write_atomic(dir / "run.json", meta_json(result).dump(2) + "\n");

  ResponseCache cache(work_dir_ / "cache");
  ResponseLog log(log_path, resume);
  Executor exec(backend, cache, patterns_, manifest.parse_mode, data, log, result.stats);

  auto has = [&](AuditTask t) { return std::find(manifest.tasks.begin(), manifest.tasks.end(), t) != manifest.tasks.end(); };
  const bool detection = has(AuditTask::gender_detection);
  const bool reasoning = has(AuditTask::gender_reasoning);
  const bool emotion = has(AuditTask::emotion_classification);

  std::vector<std::pair<std::size_t, std::size_t>> chains;
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    for (std::size_t p = 0; p < manifest.personas.size(); ++p) chains.emplace_back(i, p);
  }
  std::mt19937_64 rng(manifest.seed);
  std::shuffle(chains.begin(), chains.end(), rng);

  std::mutex merge_mutex;
  std::atomic<std::size_t> replayed{0};
  auto step = [&](const std::string& image_id, const Persona& persona, TaskKind task) {
    const ReplayKey key{image_id, persona, task, 1, manifest.disclaimer ? "disclaimer" : "base"};
    if (const auto it = replay.find(key); it != replay.end()) {
      ++replayed;
      return it->second;
    }
    return exec.execute(image_id, persona, task, manifest.disclaimer, 1);
  };

  parallel_for(chains.size(), manifest.parallelism, [&](std::size_t c) {
    const auto& image_id = data.items[chains[c].first].id;
    const auto& persona = manifest.personas[chains[c].second];
    std::vector<ModelResponse> got;
    if (detection) {
      got.push_back(step(image_id, persona, TaskKind::gender_detection));
      if (reasoning) {
        if (const auto follow = reasoning_task_for(got.back().outcome)) got.push_back(step(image_id, persona, *follow));
      }
    }
    if (emotion) got.push_back(step(image_id, persona, TaskKind::emotion_classification));
    std::lock_guard lock(merge_mutex);
    for (auto& r : got) result.history[CellKey{r.image_id, r.persona, r.task}].push_back(std::move(r));
  });
  log.close();
  exec.flush_stats();
  sort_history(result.history);

  result.stats.replayed_from_log = replayed;
  result.stats.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  write_atomic(dir / "summary.json", summary_text(result));
  return result;
}

RunResult AuditEngine::mitigate(const RunResult& run, const MitigationConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  Backend& backend = backend_for(run.manifest.backend_id);
  const auto data = load_dataset(run.manifest.dataset);

  RunResult result = run;
  result.stats = {};
  const auto dir = run_dir(run.manifest.run_id);
  std::filesystem::create_directories(dir);
  ResponseCache cache(work_dir_ / "cache");
  ResponseLog log(dir / "responses.jsonl", true);
  Executor exec(backend, cache, patterns_, run.manifest.parse_mode, data, log, result.stats);

  MitigationReport report;
  report.config = config;
  std::map<Persona, std::size_t> row_index;
  for (const auto& [key, v] : result.history) {
    if (key.task != config.task) continue;
    if (!row_index.count(key.persona)) {
      row_index[key.persona] = report.personas.size();
      report.personas.push_back({key.persona, 0, {}});
    }
    ++report.personas[row_index[key.persona]].cells;
  }
  std::sort(report.personas.begin(), report.personas.end(), [](const auto& a, const auto& b) {
    const auto& ps = enumerate_personas();
    return std::find(ps.begin(), ps.end(), a.persona) < std::find(ps.begin(), ps.end(), b.persona);
  });
  row_index.clear();
  for (std::size_t i = 0; i < report.personas.size(); ++i) row_index[report.personas[i].persona] = i;

  auto refused_cells = [&] {
    std::vector<CellKey> out;
    for (const auto& [key, v] : result.history) {
      if (key.task == config.task && is_refusal(result.terminal(key).outcome)) out.push_back(key);
    }
    return out;
  };
  auto record_pass = [&](const std::vector<CellKey>& refused) {
    report.refusals_by_pass.push_back(refused.size());
    for (auto& row : report.personas) row.refusals_by_pass.push_back(0);
    for (const auto& k : refused) ++report.personas[row_index.at(k.persona)].refusals_by_pass.back();
  };

  auto refused = refused_cells();
  record_pass(refused);
  const bool use_disclaimer = config.strategy != MitigationStrategy::rerun;
  const int pass_limit = config.strategy == MitigationStrategy::disclaimer ? std::min(2, config.max_passes)
                                                                            : config.max_passes;
  std::mutex merge_mutex;
  for (int pass = 2; pass <= pass_limit && !refused.empty(); ++pass) {
    std::vector<ModelResponse> fresh(refused.size());
    parallel_for(refused.size(), run.manifest.parallelism, [&](std::size_t i) {
      const auto& key = refused[i];
      int attempt = 0;
      {
        std::lock_guard lock(merge_mutex);
        for (const auto& r : result.history.at(key)) attempt = std::max(attempt, r.attempt_index);
      }
      fresh[i] = exec.execute(key.image_id, key.persona, key.task, use_disclaimer, attempt + 1);
    });
    for (auto& r : fresh) result.history.at(CellKey{r.image_id, r.persona, r.task}).push_back(std::move(r));

    const auto before = refused.size();
    refused = refused_cells();
    record_pass(refused);
    if (config.strategy == MitigationStrategy::disclaimer) break;
    if (static_cast<long long>(before) - static_cast<long long>(refused.size()) < config.min_improvement) break;
  }
  log.close();
  exec.flush_stats();
  sort_history(result.history);
  result.mitigation = report;
  result.stats.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  write_atomic(dir / "mitigation.json", mitigation_to_json(report).dump(2) + "\n");
  write_atomic(dir / "summary.json", summary_text(result));
  return result;
}

RunResult load_run(const std::filesystem::path& work_dir, const std::string& run_id) {
  const auto dir = work_dir / "runs" / run_id;
  if (!std::filesystem::exists(dir / "run.json")) {
    throw ConfigError("no run '" + run_id + "' under " + work_dir.string());
  }
  RunResult r;
  try {
    const auto meta = json::parse(read_all(dir / "run.json"));
    r.manifest = meta.at("manifest").get<RunManifest>();
    r.backend = meta.at("backend");
    r.refusal_pattern_version = meta.at("refusal_patterns").get<std::string>();
    r.images = meta.at("images").get<std::size_t>();
    r.excluded_unconfirmed = meta.at("excluded_unconfirmed").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError((dir / "run.json").string() + ": " + e.what());
  }
  std::map<ReplayKey, ModelResponse> latest;
  for (auto& resp : read_log(dir / "responses.jsonl", true)) latest[replay_key(resp)] = std::move(resp);
  for (auto& [k, resp] : latest) r.history[CellKey{resp.image_id, resp.persona, resp.task}].push_back(std::move(resp));
  sort_history(r.history);

  if (std::filesystem::exists(dir / "mitigation.json")) {
    const auto j = json::parse(read_all(dir / "mitigation.json"));
    MitigationReport m;
    m.config.strategy = mitigation_strategy_from_string(j.at("strategy").get<std::string>());
    m.config.task = task_from_string(j.at("task").get<std::string>());
    m.config.max_passes = j.at("max_passes").get<int>();
    m.config.min_improvement = j.at("min_improvement").get<int>();
    m.refusals_by_pass = j.at("refusals_by_pass").get<std::vector<std::size_t>>();
    for (const auto& p : j.at("personas")) {
      m.personas.push_back({Persona::from_id(p.at("persona").get<std::string>()), p.at("cells").get<std::size_t>(),
                            p.at("refusals_by_pass").get<std::vector<std::size_t>>()});
    }
    r.mitigation = m;
  }
  return r;
}

}  // namespace paudit
