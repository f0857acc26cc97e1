#include "paudit/backends.hpp"

#include <httplib.h>
#include <openssl/evp.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>
#include <fcntl.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <cstdlib>
#include <regex>
#include <thread>

namespace paudit {

// --- Time ---------------------------------------------------------------------

Clock::time_point SystemClock::now() { return std::chrono::steady_clock::now(); }

void SystemClock::sleep_until(time_point t) { std::this_thread::sleep_until(t); }

SystemClock& SystemClock::instance() {
  static SystemClock clock;
  return clock;
}

Clock::time_point ManualClock::now() {
  std::lock_guard lock(mutex_);
  return now_;
}

void ManualClock::sleep_until(time_point t) {
  std::lock_guard lock(mutex_);
  if (t > now_) now_ = t;
}

void ManualClock::advance(duration d) {
  std::lock_guard lock(mutex_);
  now_ += d;
}

RateLimiter::RateLimiter(double rate_per_second, Clock& clock)
    : rate_(rate_per_second), burst_(static_cast<std::size_t>(std::ceil(rate_per_second))), clock_(clock) {
  if (!(rate_per_second > 0.0)) throw ConfigError("rate_limit must be > 0");
}

Clock::time_point RateLimiter::acquire() {
  Clock::time_point slot;
  {
    std::lock_guard lock(mutex_);
    slot = clock_.now();
    const auto spacing = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(1.0 / rate_));
    if (!recent_.empty()) slot = std::max(slot, recent_.back() + spacing);
    if (recent_.size() >= burst_) {
      slot = std::max(slot, recent_[recent_.size() - burst_] + std::chrono::seconds(1));
    }
    recent_.push_back(slot);
    while (recent_.size() > burst_) recent_.pop_front();
  }
  clock_.sleep_until(slot);
  return slot;
}

// --- Descriptors ----------------------------------------------------------------

std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::http_chat_vision: return "http_chat_vision";
    case BackendKind::local_process: return "local_process";
    case BackendKind::mock: return "mock";
  }
  return "?";
}

BackendKind backend_kind_from_string(std::string_view s) {
  for (auto k : {BackendKind::http_chat_vision, BackendKind::local_process, BackendKind::mock}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown backend kind '" + std::string(s) + "'");
}

void BackendDescriptor::validate() const {
  auto bad = [&](const std::string& field, const std::string& why) {
    throw ConfigError("backend '" + backend_id + "': " + field + " " + why);
  };
  if (backend_id.empty()) throw ConfigError("backend_id must not be empty");
  if (!(rate_limit > 0.0)) bad("rate_limit", "must be > 0");
  if (max_retries < 0) bad("max_retries", "must be >= 0");
  if (timeout_ms <= 0) bad("timeout_ms", "must be > 0");
  if (backoff_ms < 0) bad("backoff_ms", "must be >= 0");
  if (max_tokens <= 0) bad("max_tokens", "must be > 0");
  if (temperature < 0.0) bad("temperature", "must be >= 0");
  switch (kind) {
    case BackendKind::http_chat_vision:
      if (!endpoint.starts_with("http://") && !endpoint.starts_with("https://")) {
        bad("endpoint", "must be an http(s) URL");
      }
      if (model_name.empty()) bad("model_name", "is required");
      find_dialect(dialect);
      break;
    case BackendKind::local_process:
      if (command.empty()) bad("command", "is required");
      break;
    case BackendKind::mock: break;
  }
}

void to_json(json& j, const BackendDescriptor& d) {
  j = json{{"backend_id", d.backend_id},   {"kind", to_string(d.kind)},
           {"model_name", d.model_name},   {"temperature", d.temperature},
           {"max_tokens", d.max_tokens},   {"rate_limit", d.rate_limit},
           {"max_retries", d.max_retries}, {"timeout_ms", d.timeout_ms},
           {"backoff_ms", d.backoff_ms}};
  if (d.kind == BackendKind::http_chat_vision) {
    j["endpoint"] = d.endpoint;
    j["dialect"] = d.dialect;
  }
  if (d.kind == BackendKind::local_process) j["command"] = d.command;
}

std::chrono::milliseconds backoff_delay(int backoff_ms, int retry) {
  return std::chrono::milliseconds(static_cast<long long>(backoff_ms) << (retry - 1));
}

std::chrono::milliseconds backoff_schedule_total(int backoff_ms, int retries) {
  return std::chrono::milliseconds(static_cast<long long>(backoff_ms) * ((1LL << retries) - 1));
}

// --- Backend ----------------------------------------------------------------------

Backend::Backend(BackendDescriptor descriptor, Clock& clock)
    : descriptor_(std::move(descriptor)), clock_(clock), limiter_(descriptor_.rate_limit, clock) {
  descriptor_.validate();
}

InvokeResult Backend::invoke(const BackendRequest& request) {
  if (!request.image_bytes.empty() && !request.content_hash.empty() &&
      content_hash(request.image_bytes) != request.content_hash) {
    throw InvalidImage("image '" + request.image_id + "' bytes do not match its content_hash");
  }
  ++invocations_;
  InvokeResult result;
  result.attempt_index = request.attempt_index;
  const auto start = clock_.now();
  const int tries = 1 + descriptor_.max_retries;
  for (int t = 1; t <= tries; ++t) {
    if (t > 1) clock_.sleep_for(backoff_delay(descriptor_.backoff_ms, t - 1));
    limiter_.acquire();
    const auto now_in_flight = ++in_flight_;
    auto seen = max_in_flight_.load();
    while (now_in_flight > seen && !max_in_flight_.compare_exchange_weak(seen, now_in_flight)) {
    }
    ++transport_calls_;
    Attempt a;
    try {
      a = attempt_once(request, t);
    } catch (const std::exception& e) {
      a.ok = false;
      a.retryable = true;
      a.error = e.what();
    }
    --in_flight_;
    result.transport_attempts = t;
    result.http_status = a.http_status;
    if (a.ok) {
      result.ok = true;
      result.raw_text = std::move(a.text);
      result.error.clear();
      break;
    }
    result.error = std::move(a.error);
    if (!a.retryable) break;
  }
  result.latency_ms = std::chrono::duration<double, std::milli>(clock_.now() - start).count();
  return result;
}

int Backend::detect_faces(const std::string&, const std::filesystem::path&) {
  throw ConfigError("backend '" + descriptor_.backend_id + "' cannot detect faces");
}

// --- HTTP chat-vision ----------------------------------------------------------------

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string sniff_media_type(std::span<const std::uint8_t> b) {
  auto starts = [&](std::initializer_list<std::uint8_t> sig) {
    return b.size() >= sig.size() && std::equal(sig.begin(), sig.end(), b.begin());
  };
  if (starts({0x89, 'P', 'N', 'G'})) return "image/png";
  if (starts({0xFF, 0xD8, 0xFF})) return "image/jpeg";
  if (starts({'G', 'I', 'F', '8'})) return "image/gif";
  if (b.size() >= 12 && starts({'R', 'I', 'F', 'F'}) && b[8] == 'W' && b[9] == 'E' && b[10] == 'B' &&
      b[11] == 'P') {
    return "image/webp";
  }
  return "image/jpeg";
}

namespace {

const std::vector<Dialect>& dialects() {
  static const std::vector<Dialect> table{
      {"openai",
       [](const BackendDescriptor& d, const std::string& prompt, const std::string& media,
          const std::string& b64) {
         return json{{"model", d.model_name},
                     {"temperature", d.temperature},
                     {"max_tokens", d.max_tokens},
                     {"messages",
                      json::array({{{"role", "user"},
                                    {"content",
                                     json::array({{{"type", "text"}, {"text", prompt}},
                                                  {{"type", "image_url"},
                                                   {"image_url",
                                                    {{"url", "data:" + media + ";base64," + b64}}}}})}}})}};
       },
       [](const json& r) -> std::optional<std::string> {
         const auto p = json::json_pointer("/choices/0/message/content");
         if (!r.contains(p) || !r.at(p).is_string()) return std::nullopt;
         return r.at(p).get<std::string>();
       },
       [](std::multimap<std::string, std::string>& h, const std::string& key) {
         if (!key.empty()) h.emplace("Authorization", "Bearer " + key);
       }},
      {"anthropic",
       [](const BackendDescriptor& d, const std::string& prompt, const std::string& media,
          const std::string& b64) {
         return json{
             {"model", d.model_name},
             {"temperature", d.temperature},
             {"max_tokens", d.max_tokens},
             {"messages",
              json::array({{{"role", "user"},
                            {"content",
                             json::array({{{"type", "image"},
                                           {"source", {{"type", "base64"}, {"media_type", media}, {"data", b64}}}},
                                          {{"type", "text"}, {"text", prompt}}})}}})}};
       },
       [](const json& r) -> std::optional<std::string> {
         if (!r.contains("content") || !r["content"].is_array()) return std::nullopt;
         for (const auto& part : r["content"]) {
           if (part.value("type", "") == "text" && part.contains("text") && part["text"].is_string()) {
             return part["text"].get<std::string>();
           }
         }
         return std::nullopt;
       },
       [](std::multimap<std::string, std::string>& h, const std::string& key) {
         if (!key.empty()) h.emplace("x-api-key", key);
         h.emplace("anthropic-version", "2023-06-01");
       }},
  };
  return table;
}

}  // namespace

const Dialect& find_dialect(std::string_view name) {
  for (const auto& d : dialects()) {
    if (d.name == name) return d;
  }
  throw ConfigError("unknown dialect '" + std::string(name) + "'");
}

std::vector<std::string> dialect_names() {
  std::vector<std::string> out;
  for (const auto& d : dialects()) out.push_back(d.name);
  return out;
}

HttpChatBackend::HttpChatBackend(BackendDescriptor descriptor, Clock& clock)
    : Backend(std::move(descriptor), clock), dialect_(find_dialect(this->descriptor().dialect)) {
  const auto& d = this->descriptor();
  if (!d.api_key_env.empty()) {
    const char* key = std::getenv(d.api_key_env.c_str());
    if (!key || !*key) {
      throw ConfigError("backend '" + d.backend_id + "': environment variable " + d.api_key_env + " is not set");
    }
    api_key_ = key;
  }
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(d.endpoint, m, url)) {
    throw ConfigError("backend '" + d.backend_id + "': cannot parse endpoint '" + d.endpoint + "'");
  }
  scheme_host_port_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/";
}

HttpChatBackend::Attempt HttpChatBackend::attempt_once(const BackendRequest& request, int) {
  Attempt a;
  std::vector<std::uint8_t> bytes = request.image_bytes;
  if (bytes.empty()) bytes = read_file_bytes(request.image_path);
  const auto body = dialect_.build_body(descriptor(), request.prompt.text, sniff_media_type(bytes),
                                        base64_encode(bytes));

  httplib::Client client(scheme_host_port_);
  const auto timeout = std::chrono::milliseconds(descriptor().timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  std::multimap<std::string, std::string> auth;
  dialect_.add_auth(auth, api_key_);
  const httplib::Headers headers(auth.begin(), auth.end());

  const auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) {
    a.error = "request failed: " + httplib::to_string(res.error());
    return a;
  }
  a.http_status = res->status;
  if (res->status < 200 || res->status >= 300) {
    a.error = "HTTP " + std::to_string(res->status);
    a.retryable = res->status == 408 || res->status == 429 || res->status >= 500;
    return a;
  }
  a.retryable = false;
  json parsed = json::parse(res->body, nullptr, false);
  if (parsed.is_discarded()) {
    a.error = "malformed server payload: not JSON";
    return a;
  }
  auto text = dialect_.extract_text(parsed);
  if (!text) {
    a.error = "malformed server payload: no message text";
    return a;
  }
  a.ok = true;
  a.text = std::move(*text);
  return a;
}

// --- Local process --------------------------------------------------------------------

ProcessResult run_process(const std::string& command, const std::string& input, int timeout_ms) {
  static std::once_flag sigpipe_once;
  std::call_once(sigpipe_once, [] { ::signal(SIGPIPE, SIG_IGN); });

  int in_pipe[2], out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw TransportError("pipe failed");
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw TransportError("pipe failed");
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
    throw TransportError("fork failed");
  }
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);

  std::size_t written = 0;
  while (written < input.size()) {
    const auto n = ::write(in_pipe[1], input.data() + written, input.size() - written);
    if (n <= 0) break;
    written += static_cast<std::size_t>(n);
  }
  ::close(in_pipe[1]);

  ProcessResult result;
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  char buf[4096];
  while (true) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      result.timed_out = true;
      break;
    }
    pollfd p{out_pipe[0], POLLIN, 0};
    const int r = ::poll(&p, 1, static_cast<int>(left.count()));
    if (r < 0 && errno == EINTR) continue;
    if (r == 0) {
      result.timed_out = true;
      break;
    }
    const auto n = ::read(out_pipe[0], buf, sizeof buf);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    result.out.append(buf, static_cast<std::size_t>(n));
  }
  ::close(out_pipe[0]);
  if (result.timed_out) ::kill(pid, SIGKILL);
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

LocalProcessBackend::LocalProcessBackend(BackendDescriptor descriptor, Clock& clock)
    : Backend(std::move(descriptor), clock) {}

json LocalProcessBackend::call(const json& request, std::string& error) {
  const auto r = run_process(descriptor().command, request.dump() + "\n", descriptor().timeout_ms);
  if (r.timed_out) {
    error = "process timed out";
    return nullptr;
  }
  if (r.exit_code != 0) {
    error = "process exited with status " + std::to_string(r.exit_code);
    return nullptr;
  }
  const auto line = r.out.substr(0, r.out.find('\n'));
  json reply = json::parse(line, nullptr, false);
  if (reply.is_discarded() || !reply.is_object()) {
    error = "process reply is not a JSON object: '" + line + "'";
    return nullptr;
  }
  return reply;
}

namespace {

std::optional<int> int_field(const json& reply, const char* key) {
  if (!reply.contains(key)) return std::nullopt;
  const auto& v = reply[key];
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d == std::floor(d)) return static_cast<int>(d);
  }
  return std::nullopt;
}

std::optional<std::string> label_code_from_reply(const json& reply, TaskKind task) {
  if (task == TaskKind::gender_detection) {
    if (const auto c = int_field(reply, "gender"); c && gender_from_code(*c)) return std::to_string(*c);
    if (reply.contains("gender") && reply["gender"].is_string()) {
      auto name = reply["gender"].get<std::string>();
      std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) { return std::tolower(ch); });
      if (name == "woman") name = "female";
      if (name == "man") name = "male";
      if (const auto g = gender_from_name(name)) return std::to_string(code(*g));
    }
    return std::nullopt;
  }
  if (const auto c = int_field(reply, "emotion"); c && emotion_from_code(*c)) return std::to_string(*c);
  if (reply.contains("emotion") && reply["emotion"].is_string()) {
    auto name = reply["emotion"].get<std::string>();
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (const auto e = emotion_from_name(name)) return std::to_string(code(*e));
  }
  return std::nullopt;
}

}  // namespace

LocalProcessBackend::Attempt LocalProcessBackend::attempt_once(const BackendRequest& request, int) {
  Attempt a;
  a.retryable = false;
  const auto task = request.prompt.spec.task;
  if (task != TaskKind::gender_detection && task != TaskKind::emotion_classification) {
    a.error = "task " + std::string(to_string(task)) + " is not supported by a local process backend";
    return a;
  }
  std::string error;
  const auto reply = call(json{{"image_path", request.image_path.string()},
                               {"task", task == TaskKind::gender_detection ? "gender" : "emotion"}},
                          error);
  if (reply.is_null()) {
    a.error = error;
    a.retryable = error == "process timed out";
    return a;
  }
  const auto text = label_code_from_reply(reply, task);
  if (!text) {
    a.error = "process reply has no usable label: " + reply.dump();
    return a;
  }
  a.ok = true;
  a.text = *text;
  return a;
}

int LocalProcessBackend::detect_faces(const std::string& image_id, const std::filesystem::path& image_path) {
  std::string error;
  const auto reply = call(json{{"image_path", image_path.string()}, {"task", "face_count"}}, error);
  if (reply.is_null()) throw TransportError("face detection for '" + image_id + "': " + error);
  const auto n = int_field(reply, "face_count");
  if (!n || *n < 0) {
    throw TransportError("face detection for '" + image_id + "': non-numeric face_count in " + reply.dump());
  }
  return *n;
}

// --- Mock -------------------------------------------------------------------------------

MockScript MockScript::parse(const json& j) {
  MockScript s;
  try {
    s.default_text = j.value("default", s.default_text);
    if (j.contains("defaults_by_task")) {
      for (const auto& [task, text] : j["defaults_by_task"].items()) {
        task_from_string(task);
        s.defaults_by_task[task] = text.get<std::string>();
      }
    }
    if (j.contains("entries")) {
      for (const auto& e : j["entries"]) {
        Entry entry;
        if (e.contains("image_id")) entry.image_id = e["image_id"].get<std::string>();
        if (e.contains("prompt_hash")) entry.prompt_hash = e["prompt_hash"].get<std::string>();
        if (e.contains("task")) entry.task = e["task"].get<std::string>();
        if (e.contains("persona")) entry.persona = e["persona"].get<std::string>();
        if (e.contains("attempt")) entry.attempt = e["attempt"].get<int>();
        entry.raw_text = e.value("raw_text", std::string{});
        entry.transport_failures = e.value("transport_failures", 0);
        s.entries.push_back(std::move(entry));
      }
    }
    if (j.contains("face_counts")) {
      for (const auto& [id, n] : j["face_counts"].items()) s.face_counts[id] = n.get<int>();
    }
    if (j.contains("default_face_count")) {
      if (j["default_face_count"].is_null()) {
        s.default_face_count.reset();
      } else {
        s.default_face_count = j["default_face_count"].get<int>();
      }
    }
    s.delay_ms = j.value("delay_ms", 0);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("mock script: ") + e.what());
  }
  return s;
}

MockScript MockScript::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open mock script " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("mock script " + path.string() + " is not valid JSON");
  return parse(j);
}

const MockScript::Entry* MockScript::match(const BackendRequest& r) const {
  const auto hash = sha256_hex(r.prompt.text);
  const auto task = std::string(to_string(r.prompt.spec.task));
  const auto persona = r.prompt.spec.persona.id();
  for (const auto& e : entries) {
    if (e.image_id && *e.image_id != r.image_id) continue;
    if (e.prompt_hash && *e.prompt_hash != hash) continue;
    if (e.task && *e.task != task) continue;
    if (e.persona && *e.persona != persona) continue;
    if (e.attempt && *e.attempt != r.attempt_index) continue;
    return &e;
  }
  return nullptr;
}

MockBackend::MockBackend(BackendDescriptor descriptor, Clock& clock, MockScript script)
    : Backend(std::move(descriptor), clock), script_(std::move(script)) {}

MockBackend::MockBackend(BackendDescriptor descriptor, Clock& clock, MockResponder responder,
                         std::function<std::optional<int>(const std::string&)> faces)
    : Backend(std::move(descriptor), clock), responder_(std::move(responder)), faces_(std::move(faces)) {}

MockBackend::Attempt MockBackend::attempt_once(const BackendRequest& request, int try_number) {
  Attempt a;
  if (responder_) {
    const auto reply = responder_(request, try_number);
    if (reply.delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(reply.delay_ms));
    if (!reply.text) {
      a.error = "mock transport failure";
      return a;
    }
    a.ok = true;
    a.text = *reply.text;
    return a;
  }
  if (script_.delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(script_.delay_ms));
  const auto* entry = script_.match(request);
  if (entry && try_number <= entry->transport_failures) {
    a.error = "mock transport failure";
    return a;
  }
  a.ok = true;
  if (entry) {
    a.text = entry->raw_text;
  } else if (const auto it = script_.defaults_by_task.find(std::string(to_string(request.prompt.spec.task)));
             it != script_.defaults_by_task.end()) {
    a.text = it->second;
  } else {
    a.text = script_.default_text;
  }
  return a;
}

int MockBackend::detect_faces(const std::string& image_id, const std::filesystem::path&) {
  std::optional<int> n;
  if (faces_) {
    n = faces_(image_id);
  } else if (const auto it = script_.face_counts.find(image_id); it != script_.face_counts.end()) {
    n = it->second;
  } else {
    n = script_.default_face_count;
  }
  if (!n || *n < 0) throw TransportError("mock face detection failed for '" + image_id + "'");
  return *n;
}

std::unique_ptr<Backend> make_backend(const BackendDescriptor& d, Clock& clock) {
  d.validate();
  switch (d.kind) {
    case BackendKind::http_chat_vision: return std::make_unique<HttpChatBackend>(d, clock);
    case BackendKind::local_process: return std::make_unique<LocalProcessBackend>(d, clock);
    case BackendKind::mock:
      return std::make_unique<MockBackend>(d, clock, d.script.empty() ? MockScript{} : MockScript::load(d.script));
  }
  throw ConfigError("unknown backend kind");
}

}  // namespace paudit
