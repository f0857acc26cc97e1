#include "paudit/config.hpp"

#include <toml.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace paudit {

namespace {

// JSON pointer -> "file:line:col" for TOML input.
using Locations = std::map<std::string, std::string>;

json toml_to_json(const toml::node& node, const std::string& pointer, const std::string& file, Locations& locs) {
  const auto& src = node.source();
  if (src.begin.line > 0) {
    locs[pointer] = file + ":" + std::to_string(src.begin.line) + ":" + std::to_string(src.begin.column);
  }
  if (const auto* t = node.as_table()) {
    json out = json::object();
    for (auto&& [k, v] : *t) {
      const std::string key(k.str());
      auto child = toml_to_json(v, pointer + "/" + key, file, locs);
      if (k.source().begin.line > 0) {
        locs[pointer + "/" + key] =
            file + ":" + std::to_string(k.source().begin.line) + ":" + std::to_string(k.source().begin.column);
      }
      out[key] = std::move(child);
    }
    return out;
  }
  if (const auto* a = node.as_array()) {
    json out = json::array();
    for (std::size_t i = 0; i < a->size(); ++i) {
      out.push_back(toml_to_json(*a->get(i), pointer + "/" + std::to_string(i), file, locs));
    }
    return out;
  }
  if (const auto* s = node.as_string()) return s->get();
  if (const auto* i = node.as_integer()) return i->get();
  if (const auto* f = node.as_floating_point()) return f->get();
  if (const auto* b = node.as_boolean()) return b->get();
  throw ConfigError(locs[pointer] + ": dates and times are not supported here");
}

std::string display(const std::string& pointer) {
  if (pointer.empty()) return "top level";
  std::string out;
  std::size_t start = 1;
  while (start <= pointer.size()) {
    auto end = pointer.find('/', start);
    if (end == std::string::npos) end = pointer.size();
    const auto part = pointer.substr(start, end - start);
    if (!part.empty() && std::all_of(part.begin(), part.end(), ::isdigit)) {
      out += "[" + part + "]";
    } else {
      if (!out.empty()) out += ".";
      out += part;
    }
    start = end + 1;
  }
  return out;
}

class Reader {
 public:
  Reader(const json& node, std::string pointer, const Locations& locs, const std::string& file)
      : node_(node), pointer_(std::move(pointer)), locs_(locs), file_(file) {}

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    const auto p = key.empty() ? pointer_ : pointer_ + "/" + key;
    const auto it = locs_.find(p);
    const auto where = it != locs_.end() ? it->second : file_;
    throw ConfigError(where + ": " + message);
  }

  void allow_only(std::initializer_list<const char*> keys) const {
    if (!node_.is_object()) fail("", "expected a table at " + display(pointer_));
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!allowed.count(it.key())) {
        const auto scope = pointer_.empty() ? std::string("top level") : "[" + display(pointer_) + "]";
        fail(it.key(), "unknown key '" + it.key() + "' in " + scope);
      }
    }
  }

  bool has(const char* key) const { return node_.contains(key); }

  const json& at(const char* key) const {
    if (!node_.contains(key)) {
      const auto name = pointer_.empty() ? std::string(key) : display(pointer_) + "." + key;
      fail("", "missing required key '" + name + "'");
    }
    return node_.at(key);
  }

  Reader child(const char* key) const { return Reader(at(key), pointer_ + "/" + key, locs_, file_); }
  Reader element(std::size_t i) const {
    return Reader(node_.at(i), pointer_ + "/" + std::to_string(i), locs_, file_);
  }
  const json& node() const { return node_; }

  std::string str(const char* key) const {
    const auto& v = at(key);
    if (!v.is_string()) fail(key, "'" + display(pointer_ + "/" + key) + "' must be a string");
    return v.get<std::string>();
  }
  std::string str(const char* key, std::string fallback) const { return has(key) ? str(key) : fallback; }

  double number(const char* key, double fallback) const {
    if (!has(key)) return fallback;
    const auto& v = node_.at(key);
    if (!v.is_number()) fail(key, "'" + display(pointer_ + "/" + key) + "' must be a number");
    return v.get<double>();
  }
  long long integer(const char* key, long long fallback) const {
    if (!has(key)) return fallback;
    const auto& v = node_.at(key);
    if (!v.is_number_integer()) fail(key, "'" + display(pointer_ + "/" + key) + "' must be an integer");
    return v.get<long long>();
  }
  bool boolean(const char* key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& v = node_.at(key);
    if (!v.is_boolean()) fail(key, "'" + display(pointer_ + "/" + key) + "' must be true or false");
    return v.get<bool>();
  }
  std::vector<std::string> strings(const char* key) const {
    const auto& v = at(key);
    if (!v.is_array()) fail(key, "'" + display(pointer_ + "/" + key) + "' must be an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) fail(key, "'" + display(pointer_ + "/" + key) + "' must be an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  // Runs `fn`, re-throwing domain errors at this key's location.
  template <typename Fn>
  auto guarded(const char* key, Fn fn) const {
    try {
      return fn();
    } catch (const ConfigError& e) {
      fail(key, e.what());
    } catch (const InvalidInput& e) {
      fail(key, e.what());
    }
  }

 private:
  const json& node_;
  std::string pointer_;
  const Locations& locs_;
  const std::string& file_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_relative() ? base / path : path;
}

BackendDescriptor read_backend(const Reader& r, const std::filesystem::path& base) {
  r.allow_only({"backend_id", "kind", "endpoint", "command", "script", "model_name", "temperature", "max_tokens",
                "rate_limit", "max_retries", "timeout_ms", "backoff_ms", "api_key_env", "dialect"});
  BackendDescriptor d;
  d.backend_id = r.str("backend_id");
  d.kind = r.guarded("kind", [&] { return backend_kind_from_string(r.str("kind")); });
  if (d.kind == BackendKind::http_chat_vision) {
    d.endpoint = r.str("endpoint");
    d.model_name = r.str("model_name");
  } else {
    d.endpoint = r.str("endpoint", "");
    d.model_name = r.str("model_name", std::string(to_string(d.kind)));
  }
  if (d.kind == BackendKind::local_process) {
    d.command = r.str("command");
  } else {
    d.command = r.str("command", "");
  }
  d.script = resolve(base, r.str("script", "")).string();
  d.temperature = r.number("temperature", d.temperature);
  d.max_tokens = static_cast<int>(r.integer("max_tokens", d.max_tokens));
  d.rate_limit = r.number("rate_limit", d.rate_limit);
  d.max_retries = static_cast<int>(r.integer("max_retries", d.max_retries));
  d.timeout_ms = static_cast<int>(r.integer("timeout_ms", d.timeout_ms));
  d.backoff_ms = static_cast<int>(r.integer("backoff_ms", d.backoff_ms));
  d.api_key_env = r.str("api_key_env", "");
  d.dialect = r.str("dialect", d.dialect);
  r.guarded("backend_id", [&] {
    d.validate();
    return 0;
  });
  return d;
}

Config build(const json& root, const Locations& locs, const std::string& file, const std::filesystem::path& base) {
  Reader top(root, "", locs, file);
  top.allow_only({"dataset", "work_dir", "report_dir", "annotations", "profiles", "refusal_patterns",
                  "fluidity_phrases", "backends", "run", "mitigation", "weights", "service", "metrics"});
  Config c = default_config(base);
  c.source = file;
  c.dataset = resolve(base, top.str("dataset"));
  if (top.has("work_dir")) c.work_dir = resolve(base, top.str("work_dir"));
  if (top.has("report_dir")) c.report_dir = resolve(base, top.str("report_dir"));
  c.annotations = top.has("annotations") ? resolve(base, top.str("annotations")) : c.work_dir / "annotations.jsonl";
  c.profiles = resolve(base, top.str("profiles", ""));
  c.refusal_patterns = resolve(base, top.str("refusal_patterns", ""));
  c.fluidity_phrases = resolve(base, top.str("fluidity_phrases", ""));

  if (top.has("backends")) {
    const auto& arr = top.at("backends");
    if (!arr.is_array()) top.fail("backends", "'backends' must be an array of tables ([[backends]])");
    const auto list = top.child("backends");
    std::set<std::string> ids;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      auto d = read_backend(list.element(i), base);
      if (!ids.insert(d.backend_id).second) {
        list.element(i).fail("backend_id", "duplicate backend_id '" + d.backend_id + "'");
      }
      c.backends.push_back(std::move(d));
    }
  }

  if (top.has("run")) {
    const auto r = top.child("run");
    r.allow_only({"run_id", "backend", "personas", "tasks", "disclaimer", "parallelism", "seed", "parse_mode"});
    c.run.run_id = r.str("run_id", c.run.run_id);
    c.default_backend = r.str("backend", "");
    if (r.has("personas")) {
      const auto ids = r.strings("personas");
      if (!(ids.size() == 1 && ids[0] == "all")) {
        c.run.personas.clear();
        for (const auto& id : ids) c.run.personas.push_back(r.guarded("personas", [&] { return Persona::from_id(id); }));
      }
    }
    if (r.has("tasks")) {
      c.run.tasks.clear();
      for (const auto& t : r.strings("tasks")) c.run.tasks.push_back(r.guarded("tasks", [&] { return audit_task_from_string(t); }));
    }
    c.run.disclaimer = r.boolean("disclaimer", c.run.disclaimer);
    c.run.parallelism = static_cast<int>(r.integer("parallelism", c.run.parallelism));
    const auto seed = r.integer("seed", 0);
    if (seed < 0) r.fail("seed", "'run.seed' must be >= 0");
    c.run.seed = static_cast<std::uint64_t>(seed);
    if (r.has("parse_mode")) {
      const auto mode = r.str("parse_mode");
      if (mode != "strict" && mode != "lenient") r.fail("parse_mode", "'run.parse_mode' must be strict or lenient");
      c.run.parse_mode = mode == "strict" ? ParseMode::strict : ParseMode::lenient;
    }
  }
  if (c.default_backend.empty() && c.backends.size() == 1) c.default_backend = c.backends[0].backend_id;

  if (top.has("mitigation")) {
    const auto m = top.child("mitigation");
    m.allow_only({"strategy", "max_passes", "min_improvement", "task"});
    if (m.has("strategy")) {
      c.mitigation.strategy = m.guarded("strategy", [&] { return mitigation_strategy_from_string(m.str("strategy")); });
    }
    c.mitigation.max_passes = static_cast<int>(m.integer("max_passes", c.mitigation.max_passes));
    c.mitigation.min_improvement = static_cast<int>(m.integer("min_improvement", c.mitigation.min_improvement));
    if (m.has("task")) c.mitigation.task = m.guarded("task", [&] { return task_from_string(m.str("task")); });
    m.guarded("max_passes", [&] {
      c.mitigation.validate();
      return 0;
    });
  }

  if (top.has("weights")) {
    const auto w = top.child("weights");
    w.allow_only({"scheme", "alpha", "epsilon"});
    if (w.has("scheme")) {
      c.weights.kind = w.guarded("scheme", [&] { return weight_scheme_from_string(w.str("scheme")); });
    }
    c.weights.alpha = w.number("alpha", c.weights.alpha);
    c.weights.epsilon = w.number("epsilon", c.weights.epsilon);
    w.guarded("scheme", [&] {
      c.weights.validate();
      return 0;
    });
  }

  if (top.has("service")) {
    const auto s = top.child("service");
    s.allow_only({"host", "port", "static_dir"});
    c.service.host = s.str("host", c.service.host);
    const auto port = s.integer("port", c.service.port);
    if (port < 0 || port > 65535) s.fail("port", "'service.port' must be in 0..65535");
    c.service.port = static_cast<int>(port);
    c.service.static_dir = resolve(base, s.str("static_dir", ""));
  }

  if (top.has("metrics")) {
    const auto m = top.child("metrics");
    m.allow_only({"denominator", "exclusion", "gender_source", "share_policy", "verdicts", "reference"});
    if (m.has("denominator")) {
      const auto& v = m.at("denominator");
      c.metrics.denominator = v.is_number_integer() ? std::to_string(v.get<long long>()) : m.str("denominator");
      m.guarded("denominator", [&] { return Denominator::parse(c.metrics.denominator); });
    }
    if (m.has("exclusion")) {
      c.metrics.exclusion = m.guarded("exclusion", [&] { return exclusion_policy_from_string(m.str("exclusion")); });
    }
    if (m.has("gender_source")) {
      c.metrics.gender_source =
          m.guarded("gender_source", [&] { return gender_source_from_string(m.str("gender_source")); });
    }
    if (m.has("share_policy")) {
      c.metrics.share_policy = m.guarded("share_policy", [&] { return share_policy_from_string(m.str("share_policy")); });
    }
    c.metrics.verdicts = resolve(base, m.str("verdicts", ""));
    c.metrics.reference = resolve(base, m.str("reference", ""));
  }

  c.run.dataset = c.dataset;
  c.run.backend_id = c.default_backend;
  return c;
}

}  // namespace

std::string_view to_string(ExclusionPolicy p) {
  return p == ExclusionPolicy::exclude ? "exclude" : "count_as_miss";
}

ExclusionPolicy exclusion_policy_from_string(std::string_view s) {
  if (s == "exclude") return ExclusionPolicy::exclude;
  if (s == "count_as_miss") return ExclusionPolicy::count_as_miss;
  throw ConfigError("unknown exclusion policy '" + std::string(s) + "' (exclude | count_as_miss)");
}

GenderSource gender_source_from_string(std::string_view s) {
  if (s == "model_classified") return GenderSource::model_classified;
  if (s == "jury_benchmark") return GenderSource::jury_benchmark;
  throw ConfigError("unknown gender source '" + std::string(s) + "' (model_classified | jury_benchmark)");
}

SharePolicy share_policy_from_string(std::string_view s) {
  if (s == "all_items") return SharePolicy::all_items;
  if (s == "answered_only") return SharePolicy::answered_only;
  throw ConfigError("unknown share policy '" + std::string(s) + "' (all_items | answered_only)");
}

const BackendDescriptor& Config::backend(const std::string& id) const {
  for (const auto& b : backends) {
    if (b.backend_id == id) return b;
  }
  std::string known;
  for (const auto& b : backends) known += (known.empty() ? "" : ", ") + b.backend_id;
  throw ConfigError("backend '" + id + "' is not configured" + (known.empty() ? "" : " (known: " + known + ")"));
}

Config default_config(const std::filesystem::path& base_dir) {
  Config c;
  c.work_dir = base_dir / "work";
  c.report_dir = base_dir / "reports";
  c.annotations = c.work_dir / "annotations.jsonl";
  c.run.run_id = "run";
  return c;
}

Config parse_config(std::string_view text, bool is_toml, const std::string& source_name,
                    const std::filesystem::path& base_dir) {
  Locations locs;
  json root;
  if (is_toml) {
    try {
      const auto table = toml::parse(text, source_name);
      root = toml_to_json(table, "", source_name, locs);
    } catch (const toml::parse_error& e) {
      const auto& b = e.source().begin;
      throw ConfigError(source_name + ":" + std::to_string(b.line) + ":" + std::to_string(b.column) + ": " +
                        std::string(e.description()));
    }
  } else {
    try {
      root = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(source_name + ": " + e.what());
    }
  }
  return build(root, locs, source_name, base_dir);
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  const auto ext = path.extension().string();
  bool is_toml = true;
  if (ext == ".json") {
    is_toml = false;
  } else if (ext != ".toml") {
    const auto text = os.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    is_toml = first == std::string::npos || text[first] != '{';
  }
  auto base = path.parent_path();
  if (base.empty()) base = ".";
  return parse_config(os.str(), is_toml, path.string(), base);
}

}  // namespace paudit
