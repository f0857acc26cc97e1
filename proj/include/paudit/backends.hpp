#pragma once

// Model sources behind one interface: a multimodal chat HTTP endpoint, a
// local face/emotion tool run as an external process, and a scripted mock.
// Backends return verbatim text only; classification happens in parsing.

#include <atomic>
#include <chrono>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "paudit/core.hpp"
#include "paudit/prompts.hpp"

namespace paudit {

// --- Time ---------------------------------------------------------------------

class Clock {
 public:
  using time_point = std::chrono::steady_clock::time_point;
  using duration = std::chrono::steady_clock::duration;

  virtual ~Clock() = default;
  virtual time_point now() = 0;
  virtual void sleep_until(time_point t) = 0;
  void sleep_for(duration d) { sleep_until(now() + d); }
};

class SystemClock : public Clock {
 public:
  time_point now() override;
  void sleep_until(time_point t) override;
  static SystemClock& instance();
};

// Virtual time: sleeping advances the clock instantly. For tests.
class ManualClock : public Clock {
 public:
  time_point now() override;
  void sleep_until(time_point t) override;
  void advance(duration d);

 private:
  std::mutex mutex_;
  time_point now_{};
};

// Admits at most ceil(rate) dispatches in any half-open one-second window,
// spaced at least 1/rate apart. Thread-safe; callers are served in arrival
// order of their reservations.
class RateLimiter {
 public:
  RateLimiter(double rate_per_second, Clock& clock);
  // Blocks until a dispatch slot is free; returns the admitted time.
  Clock::time_point acquire();

 private:
  double rate_;
  std::size_t burst_;
  Clock& clock_;
  std::mutex mutex_;
  std::deque<Clock::time_point> recent_;
};

// --- Descriptors ----------------------------------------------------------------

enum class BackendKind { http_chat_vision, local_process, mock };

std::string_view to_string(BackendKind k);
BackendKind backend_kind_from_string(std::string_view s);

struct BackendDescriptor {
  std::string backend_id;
  BackendKind kind = BackendKind::mock;
  std::string endpoint;  // http_chat_vision: full URL of the chat endpoint
  std::string command;   // local_process: shell command line
  std::string script;    // mock: path of the JSON script (optional)
  std::string model_name;
  double temperature = 0.0;
  int max_tokens = 300;
  double rate_limit = 1.0;  // requests per second
  int max_retries = 3;
  int timeout_ms = 60000;
  int backoff_ms = 1000;  // first retry delay; doubles each retry
  std::string api_key_env;
  std::string dialect = "openai";

  // Throws ConfigError naming the offending field.
  void validate() const;
};

void to_json(json& j, const BackendDescriptor& d);

// Sum of the waits before retries 1..n: base * (2^n - 1).
std::chrono::milliseconds backoff_schedule_total(int backoff_ms, int retries);
std::chrono::milliseconds backoff_delay(int backoff_ms, int retry);  // retry >= 1

struct BackendRequest {
  std::string image_id;
  std::filesystem::path image_path;
  std::vector<std::uint8_t> image_bytes;
  std::string content_hash;  // must match image_bytes when both are present
  RenderedPrompt prompt;
  int attempt_index = 1;
};

struct InvokeResult {
  bool ok = false;
  std::string raw_text;      // verbatim model text when ok
  std::string error;         // transport failure detail when !ok
  int http_status = 0;
  int attempt_index = 1;     // echoed from the request
  int transport_attempts = 0;
  double latency_ms = 0.0;
};

// --- Backend interface ------------------------------------------------------------

class Backend {
 public:
  Backend(BackendDescriptor descriptor, Clock& clock);
  virtual ~Backend() = default;

  const BackendDescriptor& descriptor() const { return descriptor_; }

  // Thread-safe. Retries transient failures with exponential backoff.
  // Throws InvalidImage when the bytes do not match the declared hash.
  InvokeResult invoke(const BackendRequest& request);

  // Throws TransportError when the tool fails or answers nonsense.
  virtual int detect_faces(const std::string& image_id, const std::filesystem::path& image_path);

  std::size_t invocations() const { return invocations_.load(); }
  std::size_t transport_calls() const { return transport_calls_.load(); }
  std::size_t max_in_flight() const { return max_in_flight_.load(); }

 protected:
  struct Attempt {
    bool ok = false;
    bool retryable = true;
    std::string text;
    std::string error;
    int http_status = 0;
  };
  // One transport attempt; `try_number` counts from 1 within an invoke.
  virtual Attempt attempt_once(const BackendRequest& request, int try_number) = 0;

  Clock& clock() { return clock_; }

 private:
  BackendDescriptor descriptor_;
  Clock& clock_;
  RateLimiter limiter_;
  std::atomic<std::size_t> invocations_{0};
  std::atomic<std::size_t> transport_calls_{0};
  std::atomic<std::size_t> in_flight_{0};
  std::atomic<std::size_t> max_in_flight_{0};
};

// --- HTTP chat-vision ----------------------------------------------------------------

// Request/response shapes of one endpoint family.
struct Dialect {
  std::string name;
  std::function<json(const BackendDescriptor&, const std::string& prompt, const std::string& media_type,
                     const std::string& base64_image)>
      build_body;
  std::function<std::optional<std::string>(const json&)> extract_text;
  std::function<void(std::multimap<std::string, std::string>&, const std::string& api_key)> add_auth;
};

const Dialect& find_dialect(std::string_view name);  // ConfigError when unknown
std::vector<std::string> dialect_names();

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::string sniff_media_type(std::span<const std::uint8_t> bytes);

class HttpChatBackend : public Backend {
 public:
  HttpChatBackend(BackendDescriptor descriptor, Clock& clock);

 protected:
  Attempt attempt_once(const BackendRequest& request, int try_number) override;

 private:
  const Dialect& dialect_;
  std::string api_key_;
  std::string scheme_host_port_;
  std::string path_;
};

// --- Local process --------------------------------------------------------------------

struct ProcessResult {
  int exit_code = -1;
  bool timed_out = false;
  std::string out;
};

// Runs `/bin/sh -c command`, feeds `input` on stdin, collects stdout.
ProcessResult run_process(const std::string& command, const std::string& input, int timeout_ms);

class LocalProcessBackend : public Backend {
 public:
  LocalProcessBackend(BackendDescriptor descriptor, Clock& clock);

  int detect_faces(const std::string& image_id, const std::filesystem::path& image_path) override;

 protected:
  Attempt attempt_once(const BackendRequest& request, int try_number) override;

 private:
  // One request line in, one JSON reply line out.
  json call(const json& request, std::string& error);
};

// --- Mock -------------------------------------------------------------------------------

struct MockReply {
  std::optional<std::string> text;  // nullopt: transport failure on this try
  int delay_ms = 0;                 // real wall-clock delay before replying
};

using MockResponder = std::function<MockReply(const BackendRequest&, int try_number)>;

// Script file (JSON):
// {
//   "default": "0",
//   "defaults_by_task": {"emotion_classification": "7"},
//   "entries": [{"image_id": "...", "prompt_hash": "...", "task": "...",
//                "persona": "...", "attempt": 2, "raw_text": "...",
//                "transport_failures": 1}],
//   "face_counts": {"img-1": 1},
//   "default_face_count": 1,
//   "delay_ms": 0
// }
// Entries match when every field they name matches; the first match wins.
struct MockScript {
  struct Entry {
    std::optional<std::string> image_id, prompt_hash, task, persona;
    std::optional<int> attempt;
    std::string raw_text;
    int transport_failures = 0;
  };
  std::string default_text = "0";
  std::map<std::string, std::string> defaults_by_task;
  std::vector<Entry> entries;
  std::map<std::string, int> face_counts;
  std::optional<int> default_face_count = 1;
  int delay_ms = 0;

  static MockScript parse(const json& j);
  static MockScript load(const std::filesystem::path& path);
  const Entry* match(const BackendRequest& request) const;
};

class MockBackend : public Backend {
 public:
  MockBackend(BackendDescriptor descriptor, Clock& clock, MockScript script = {});
  MockBackend(BackendDescriptor descriptor, Clock& clock, MockResponder responder,
              std::function<std::optional<int>(const std::string&)> faces = {});

  int detect_faces(const std::string& image_id, const std::filesystem::path& image_path) override;

 protected:
  Attempt attempt_once(const BackendRequest& request, int try_number) override;

 private:
  MockScript script_;
  MockResponder responder_;
  std::function<std::optional<int>(const std::string&)> faces_;
};

// Builds the backend for a descriptor; mock backends load `script` when set.
std::unique_ptr<Backend> make_backend(const BackendDescriptor& descriptor,
                                      Clock& clock = SystemClock::instance());

}  // namespace paudit
