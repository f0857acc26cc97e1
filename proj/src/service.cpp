#include "paudit/service.hpp"

#include <httplib.h>

#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "paudit/backends.hpp"
#include "paudit/benchmark.hpp"

namespace paudit {

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

bool eligible(const ImageItem& item, BenchmarkTask task) {
  if (task == BenchmarkTask::single_face) return item.single_face_validated != SingleFaceState::rejected;
  return item.single_face_validated == SingleFaceState::confirmed;
}

const std::vector<BenchmarkTask> kTasks{BenchmarkTask::gender, BenchmarkTask::emotion,
                                        BenchmarkTask::dominant_emotion, BenchmarkTask::single_face};

}  // namespace

struct AnnotationService::Impl {
  ServiceOptions options;
  std::vector<ImageItem> items;
  std::map<std::string, std::size_t> by_id;
  std::filesystem::path image_root;
  std::vector<AnnotatorProfile> profiles;
  AnnotationStore store;
  std::mutex write_mutex;  // one writer at a time
  httplib::Server server;
  std::thread thread;

  explicit Impl(ServiceOptions o) : options(std::move(o)), store(options.store) {
    items = load_manifest(options.manifest);
    for (std::size_t i = 0; i < items.size(); ++i) by_id[items[i].id] = i;
    image_root = options.manifest.parent_path();
    if (!options.profiles.empty()) profiles = load_profiles(options.profiles);
    routes();
  }

  std::filesystem::path image_path(const ImageItem& item) const {
    std::filesystem::path p(item.uri);
    return p.is_relative() ? image_root / p : p;
  }

  void routes() {
    server.Get("/api/queue", [this](const httplib::Request& req, httplib::Response& res) { queue(req, res); });
    server.Get(R"(/api/images/([^/]+))",
               [this](const httplib::Request& req, httplib::Response& res) { image(req, res); });
    server.Post("/api/annotations",
                [this](const httplib::Request& req, httplib::Response& res) { annotate(req, res); });
    server.Get("/api/disagreements",
               [this](const httplib::Request& req, httplib::Response& res) { disagreements(req, res); });
    server.Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) { progress(res); });
    server.Get("/api/annotators", [this](const httplib::Request&, httplib::Response& res) { annotators(res); });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    });
    if (!options.static_dir.empty()) server.set_mount_point("/", options.static_dir.string());
  }

  void queue(const httplib::Request& req, httplib::Response& res) {
    const auto annotator = req.get_param_value("annotator");
    const auto task_name = req.get_param_value("task");
    if (annotator.empty() || task_name.empty()) return send_error(res, 400, "annotator and task are required");
    const auto task = benchmark_task_from_string(task_name);
    if (!task) return send_error(res, 422, "unknown task '" + task_name + "'");
    std::size_t limit = 20;
    if (req.has_param("limit")) {
      try {
        limit = std::stoul(req.get_param_value("limit"));
      } catch (const std::exception&) {
        return send_error(res, 400, "limit must be a non-negative integer");
      }
    }
    std::set<std::string> done;
    for (const auto& r : store.records()) {
      if (r.annotator_id == annotator && r.task == *task) done.insert(r.image_id);
    }
    json list = json::array();
    std::size_t total = 0, remaining = 0;
    for (const auto& item : items) {
      if (!eligible(item, *task)) continue;
      ++total;
      if (done.contains(item.id)) continue;
      ++remaining;
      if (list.size() < limit) {
        list.push_back({{"image_id", item.id}, {"url", "/api/images/" + item.id}, {"task", to_string(*task)}});
      }
    }
    send_json(res, 200,
              {{"annotator", annotator},
               {"task", to_string(*task)},
               {"labels", label_domain(*task)},
               {"items", list},
               {"progress", {{"total", total}, {"done", total - remaining}, {"remaining", remaining}}}});
  }

  void image(const httplib::Request& req, httplib::Response& res) {
    const auto id = req.matches[1].str();
    const auto it = by_id.find(id);
    if (it == by_id.end()) return send_error(res, 404, "unknown image '" + id + "'");
    std::vector<std::uint8_t> bytes;
    try {
      bytes = read_file_bytes(image_path(items[it->second]));
    } catch (const Error& e) {
      return send_error(res, 404, e.what());
    }
    const auto type = sniff_media_type(bytes);
    res.status = 200;
    res.set_content(std::string(bytes.begin(), bytes.end()), type);
  }

  void annotate(const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error&) {
      return send_error(res, 400, "body is not valid JSON");
    }
    if (!body.is_object()) return send_error(res, 400, "body must be a JSON object");
    auto field = [&](const char* name) -> std::string {
      if (!body.contains(name) || body[name].is_null()) return "";
      const auto& v = body[name];
      return v.is_string() ? v.get<std::string>() : v.dump();
    };
    auto timestamp = field("timestamp");
    if (timestamp.empty()) timestamp = utc_timestamp_now();
    AnnotationRecord record;
    try {
      record = validate_annotation(field("annotator_id"), field("image_id"), field("task"), field("label"), timestamp);
    } catch (const RowError& e) {
      return send_error(res, 422, e.what());
    }
    if (!by_id.contains(record.image_id)) return send_error(res, 404, "unknown image '" + record.image_id + "'");
    {
      std::lock_guard lock(write_mutex);
      store.append(record);
    }
    send_json(res, 201, record);
  }

  void disagreements(const httplib::Request& req, httplib::Response& res) {
    const bool reveal = req.get_param_value("reveal") == "1";
    const auto records = store.records();
    std::vector<JuryVerdict> verdicts;
    try {
      verdicts = aggregate_jury(records, options.weights, JuryInputs{profiles, {}});
    } catch (const MissingWeights& e) {
      return send_error(res, 409, e.what());
    }
    std::map<std::pair<std::string, BenchmarkTask>, std::vector<const AnnotationRecord*>> cells;
    for (const auto& r : records) cells[{r.image_id, r.task}].push_back(&r);

    json out = json::array();
    for (const auto& v : verdicts) {
      const auto& labels = cells[{v.image_id, v.task}];
      std::set<std::string> distinct;
      for (const auto* r : labels) distinct.insert(r->label);
      if (distinct.size() < 2 && !v.tie) continue;
      json coders = json::array();
      int n = 0;
      for (const auto* r : labels) {
        coders.push_back({{"coder", reveal ? r->annotator_id : "coder-" + std::to_string(++n)}, {"label", r->label}});
      }
      out.push_back({{"image_id", v.image_id},
                     {"task", to_string(v.task)},
                     {"url", "/api/images/" + v.image_id},
                     {"labels", coders},
                     {"verdict", v.label},
                     {"agreement", v.agreement},
                     {"tie_flag", v.tie}});
    }
    send_json(res, 200, {{"method", to_string(options.weights.kind)}, {"items", out}});
  }

  void progress(httplib::Response& res) {
    const auto records = store.records();
    json tasks = json::object();
    std::map<std::string, std::map<std::string, std::size_t>> per_annotator;
    for (auto t : kTasks) {
      std::size_t eligible_count = 0;
      for (const auto& item : items) eligible_count += eligible(item, t) ? 1 : 0;
      std::set<std::string> labeled;
      std::size_t annotations = 0;
      for (const auto& r : records) {
        if (r.task != t) continue;
        ++annotations;
        labeled.insert(r.image_id);
        ++per_annotator[r.annotator_id][std::string(to_string(t))];
      }
      tasks[std::string(to_string(t))] = {
          {"eligible", eligible_count}, {"labeled_images", labeled.size()}, {"annotations", annotations}};
    }
    send_json(res, 200, {{"images", items.size()}, {"tasks", tasks}, {"annotators", per_annotator}});
  }

  void annotators(httplib::Response& res) {
    std::map<std::string, std::size_t> counts;
    for (const auto& r : store.records()) ++counts[r.annotator_id];
    json out = json::array();
    std::set<std::string> listed;
    for (const auto& p : profiles) {
      listed.insert(p.annotator_id);
      out.push_back({{"annotator_id", p.annotator_id},
                     {"gender", p.gender},
                     {"race", p.race},
                     {"experience_years", p.experience_years},
                     {"trained", p.trained},
                     {"annotations", counts[p.annotator_id]}});
    }
    for (const auto& [id, n] : counts) {
      if (!listed.contains(id)) out.push_back({{"annotator_id", id}, {"annotations", n}});
    }
    send_json(res, 200, out);
  }
};

AnnotationService::AnnotationService(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

AnnotationService::~AnnotationService() { stop(); }

int AnnotationService::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound <= 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void AnnotationService::wait() {
  if (impl_->thread.joinable()) impl_->thread.join();
}

void AnnotationService::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace paudit
