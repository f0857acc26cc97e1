#include <doctest.h>

#include <httplib.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "paudit/backends.hpp"

using namespace paudit;

namespace {

BackendDescriptor mock_descriptor(std::string id = "mock") {
  BackendDescriptor d;
  d.backend_id = std::move(id);
  d.kind = BackendKind::mock;
  d.model_name = "mock-1";
  d.rate_limit = 1e6;
  d.backoff_ms = 0;
  return d;
}

BackendRequest request_for(std::string image_id, TaskKind task = TaskKind::gender_detection,
                           Persona persona = Persona::control(), int attempt = 1) {
  BackendRequest r;
  r.image_id = std::move(image_id);
  r.prompt = render_prompt({task, persona, false});
  r.attempt_index = attempt;
  return r;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "paudit_backend_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("backoff schedule") {
  CHECK(backoff_delay(10, 1).count() == 10);
  CHECK(backoff_delay(10, 3).count() == 40);
  CHECK(backoff_schedule_total(10, 3).count() == 70);
  CHECK(backoff_schedule_total(250, 0).count() == 0);
}

TEST_CASE("rate limiter: any one-second window holds at most ceil(r) dispatches") {
  for (double rate : {0.5, 1.0, 2.5, 3.0, 7.0, 10.0}) {
    CAPTURE(rate);
    ManualClock clock;
    RateLimiter limiter(rate, clock);
    std::vector<Clock::time_point> ts;
    for (int i = 0; i < 60; ++i) {
      ts.push_back(limiter.acquire());
      if (i % 7 == 3) clock.advance(std::chrono::milliseconds(130));
    }
    const auto cap = static_cast<std::size_t>(std::ceil(rate));
    for (std::size_t i = 0; i < ts.size(); ++i) {
      std::size_t in_window = 0;
      for (std::size_t k = i; k < ts.size() && ts[k] < ts[i] + std::chrono::seconds(1); ++k) ++in_window;
      CHECK(in_window <= cap);
    }
    // long-run rate is respected too
    const double span = std::chrono::duration<double>(ts.back() - ts.front()).count();
    CHECK(span >= (ts.size() - 1) / rate - 1e-6);
  }
  ManualClock clock;
  CHECK_THROWS_AS(RateLimiter(0.0, clock), ConfigError);
}

TEST_CASE("descriptor validation names the field") {
  auto d = mock_descriptor();
  d.rate_limit = 0;
  CHECK_THROWS_WITH_AS(d.validate(), doctest::Contains("rate_limit"), ConfigError);
  d = mock_descriptor();
  d.kind = BackendKind::http_chat_vision;
  d.endpoint = "ftp://x";
  CHECK_THROWS_WITH_AS(d.validate(), doctest::Contains("endpoint"), ConfigError);
  d.endpoint = "http://localhost:1/v1";
  d.dialect = "klingon";
  CHECK_THROWS_AS(d.validate(), ConfigError);
  d = mock_descriptor();
  d.kind = BackendKind::local_process;
  CHECK_THROWS_WITH_AS(d.validate(), doctest::Contains("command"), ConfigError);
  CHECK(backend_kind_from_string("local_process") == BackendKind::local_process);
}

TEST_CASE("mock backend: canned text keyed by image and prompt hash") {
  const auto req = request_for("img-7");
  const json script{{"default", "0"},
                    {"entries",
                     {{{"image_id", "img-7"}, {"prompt_hash", sha256_hex(req.prompt.text)}, {"raw_text", "1"}}}}};
  ManualClock clock;
  MockBackend mock(mock_descriptor(), clock, MockScript::parse(script));
  const auto r = mock.invoke(req);
  CHECK(r.ok);
  CHECK(r.raw_text == "1");
  CHECK(mock.invoke(request_for("img-8")).raw_text == "0");
  CHECK(mock.invocations() == 2);
}

TEST_CASE("mock backend: fail-first script succeeds on the second transport attempt") {
  const json script{{"entries", {{{"image_id", "img-1"}, {"raw_text", "0"}, {"transport_failures", 1}}}}};
  ManualClock clock;
  MockBackend mock(mock_descriptor(), clock, MockScript::parse(script));
  const auto r = mock.invoke(request_for("img-1"));
  CHECK(r.ok);
  CHECK(r.raw_text == "0");
  CHECK(r.transport_attempts == 2);
  CHECK(r.attempt_index == 1);
  CHECK(mock.transport_calls() == 2);
}

TEST_CASE("mock backend: exhausted retries yield a transport error, never text") {
  const json script{{"entries", {{{"image_id", "img-1"}, {"raw_text", "0"}, {"transport_failures", 99}}}}};
  ManualClock clock;
  auto d = mock_descriptor();
  d.max_retries = 2;
  d.backoff_ms = 100;
  MockBackend mock(d, clock, MockScript::parse(script));
  const auto start = clock.now();
  const auto r = mock.invoke(request_for("img-1"));
  CHECK_FALSE(r.ok);
  CHECK(r.raw_text.empty());
  CHECK(r.transport_attempts == 3);
  CHECK(clock.now() - start >= backoff_schedule_total(100, 2));
}

TEST_CASE("mock backend is deterministic and matches on persona, task and attempt") {
  const json script{
      {"defaults_by_task", {{"emotion_classification", "7"}}},
      {"entries",
       {{{"persona", "white_transgender"}, {"attempt", 1}, {"raw_text", "Sorry I could not assist."}},
        {{"persona", "white_transgender"}, {"raw_text", "1"}}}}};
  ManualClock clock;
  MockBackend a(mock_descriptor(), clock, MockScript::parse(script));
  MockBackend b(mock_descriptor(), clock, MockScript::parse(script));
  const Persona wt{GenderIdentity::transgender, Race::white};
  for (int attempt : {1, 2}) {
    const auto ra = a.invoke(request_for("x", TaskKind::gender_detection, wt, attempt));
    const auto rb = b.invoke(request_for("x", TaskKind::gender_detection, wt, attempt));
    CHECK(ra.raw_text == rb.raw_text);
    CHECK(ra.raw_text == (attempt == 1 ? "Sorry I could not assist." : "1"));
  }
  CHECK(a.invoke(request_for("x", TaskKind::emotion_classification)).raw_text == "7");
}

TEST_CASE("mock face detection") {
  const json script{{"face_counts", {{"one", 1}, {"none", 0}, {"broken", -1}}}, {"default_face_count", nullptr}};
  ManualClock clock;
  MockBackend mock(mock_descriptor(), clock, MockScript::parse(script));
  CHECK(mock.detect_faces("one", "") == 1);
  CHECK(mock.detect_faces("none", "") == 0);
  CHECK_THROWS_AS(mock.detect_faces("broken", ""), TransportError);
  CHECK_THROWS_AS(mock.detect_faces("unknown", ""), TransportError);
}

TEST_CASE("image bytes must match the declared hash") {
  ManualClock clock;
  MockBackend mock(mock_descriptor(), clock);
  auto req = request_for("img");
  req.image_bytes = {1, 2, 3};
  req.content_hash = content_hash(req.image_bytes);
  CHECK(mock.invoke(req).ok);
  req.content_hash = sha256_hex("other");
  CHECK_THROWS_AS(mock.invoke(req), InvalidImage);
}

TEST_CASE("concurrent invokes respect the rate limiter and count in-flight calls") {
  auto d = mock_descriptor();
  MockBackend mock(d, SystemClock::instance(), [](const BackendRequest&, int) { return MockReply{"0", 5}; });
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i) {
    threads.emplace_back([&] {
      for (int k = 0; k < 5; ++k) mock.invoke(request_for("img"));
    });
  }
  for (auto& t : threads) t.join();
  CHECK(mock.invocations() == 20);
  CHECK(mock.max_in_flight() >= 1);
  CHECK(mock.max_in_flight() <= 4);
}

TEST_CASE("base64 and media sniffing") {
  const std::string s = "Man";
  CHECK(base64_encode({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}) == "TWFu");
  const std::vector<std::uint8_t> png{0x89, 'P', 'N', 'G', 0x0D};
  CHECK(sniff_media_type(png) == "image/png");
  const std::vector<std::uint8_t> jpg{0xFF, 0xD8, 0xFF, 0xE0};
  CHECK(sniff_media_type(jpg) == "image/jpeg");
}

TEST_CASE("http backend: openai dialect request shape, retry on 503, text extraction") {
  httplib::Server server;
  std::atomic<int> calls{0};
  json seen;
  std::string auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (++calls == 1) {
      res.status = 503;
      return;
    }
    seen = json::parse(req.body);
    auth = req.get_header_value("Authorization");
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"1"}}]})", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("PAUDIT_TEST_KEY", "sekret", 1);
  BackendDescriptor d;
  d.backend_id = "gpt";
  d.kind = BackendKind::http_chat_vision;
  d.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  d.model_name = "vision-model";
  d.api_key_env = "PAUDIT_TEST_KEY";
  d.backoff_ms = 1;
  d.rate_limit = 1000;
  auto backend = make_backend(d);
  auto req = request_for("img");
  req.image_bytes = {0x89, 'P', 'N', 'G', 1, 2, 3};
  const auto r = backend->invoke(req);
  server.stop();
  t.join();

  CHECK(r.ok);
  CHECK(r.raw_text == "1");
  CHECK(r.transport_attempts == 2);
  CHECK(auth == "Bearer sekret");
  CHECK(seen["model"] == "vision-model");
  CHECK(seen["temperature"] == 0.0);
  const auto& content = seen["messages"][0]["content"];
  REQUIRE(content.size() == 2);
  CHECK(content[0]["type"] == "text");
  CHECK(content[0]["text"] == req.prompt.text);
  CHECK(content[1]["image_url"]["url"].get<std::string>().starts_with("data:image/png;base64,"));
}

TEST_CASE("http backend: malformed payload and 4xx are terminal transport errors") {
  httplib::Server server;
  std::atomic<int> calls{0};
  server.Post("/bad", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.set_content("<html>oops</html>", "text/html");
  });
  server.Post("/forbidden", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 403;
  });
  server.Post("/anthropic", [&](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    const bool ok = body["messages"][0]["content"][0]["source"]["type"] == "base64";
    res.set_content(json{{"content", {{{"type", "text"}, {"text", ok ? "0" : "?"}}}}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  BackendDescriptor d;
  d.backend_id = "h";
  d.kind = BackendKind::http_chat_vision;
  d.model_name = "m";
  d.rate_limit = 1000;
  d.backoff_ms = 1;
  auto req = request_for("img");
  req.image_bytes = {1, 2, 3};

  d.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/bad";
  const auto bad = make_backend(d)->invoke(req);
  CHECK_FALSE(bad.ok);
  CHECK(bad.error.find("malformed") != std::string::npos);
  CHECK(bad.transport_attempts == 1);

  d.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/forbidden";
  const auto forbidden = make_backend(d)->invoke(req);
  CHECK_FALSE(forbidden.ok);
  CHECK(forbidden.http_status == 403);
  CHECK(forbidden.transport_attempts == 1);

  d.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/anthropic";
  d.dialect = "anthropic";
  const auto claude = make_backend(d)->invoke(req);
  CHECK(claude.ok);
  CHECK(claude.raw_text == "0");

  server.stop();
  t.join();
}

TEST_CASE("http backend: unreachable endpoint waits out the whole backoff schedule") {
  BackendDescriptor d;
  d.backend_id = "dead";
  d.kind = BackendKind::http_chat_vision;
  d.endpoint = "http://127.0.0.1:1/v1/chat/completions";
  d.model_name = "m";
  d.max_retries = 3;
  d.backoff_ms = 10;
  d.timeout_ms = 500;
  d.rate_limit = 1000;
  auto backend = make_backend(d);
  auto req = request_for("img");
  req.image_bytes = {1, 2, 3};
  const auto start = std::chrono::steady_clock::now();
  const auto r = backend->invoke(req);
  const auto elapsed = std::chrono::steady_clock::now() - start;
  CHECK_FALSE(r.ok);
  CHECK(r.transport_attempts == 4);
  CHECK(elapsed >= backoff_schedule_total(10, 3));
}

TEST_CASE("http backend: missing API key variable is a configuration error") {
  BackendDescriptor d;
  d.backend_id = "gpt";
  d.kind = BackendKind::http_chat_vision;
  d.endpoint = "http://127.0.0.1:1/";
  d.model_name = "m";
  d.api_key_env = "PAUDIT_SURELY_UNSET_VARIABLE";
  CHECK_THROWS_AS(make_backend(d), ConfigError);
}

TEST_CASE("local process backend") {
  const auto tool = scratch("tool.sh");
  std::ofstream(tool) << "#!/bin/sh\n"
                         "read line\n"
                         "case \"$line\" in\n"
                         "  *face_count*) echo '{\"face_count\": 1}' ;;\n"
                         "  *gender*) echo '{\"gender\": \"Woman\", \"confidence\": 0.91}' ;;\n"
                         "  *emotion*) echo '{\"emotion\": \"happy\", \"confidence\": 0.5}' ;;\n"
                         "esac\n";
  BackendDescriptor d;
  d.backend_id = "deepface";
  d.kind = BackendKind::local_process;
  d.command = "sh " + tool.string();
  d.rate_limit = 1000;
  d.timeout_ms = 5000;
  auto backend = make_backend(d);
  CHECK(backend->detect_faces("a", "/tmp/a.jpg") == 1);
  auto req = request_for("a");
  req.image_path = "/tmp/a.jpg";
  const auto g = backend->invoke(req);
  CHECK(g.ok);
  CHECK(g.raw_text == "0");
  const auto e = backend->invoke(request_for("a", TaskKind::emotion_classification));
  CHECK(e.raw_text == "4");
  const auto reasoning = backend->invoke(request_for("a", TaskKind::gender_reasoning_female));
  CHECK_FALSE(reasoning.ok);

  d.command = "echo '{\"face_count\": \"many\"}'";
  CHECK_THROWS_AS(make_backend(d)->detect_faces("a", "/tmp/a.jpg"), TransportError);
  d.command = "exit 3";
  CHECK_THROWS_WITH_AS(make_backend(d)->detect_faces("a", "/tmp/a.jpg"), doctest::Contains("status 3"),
                       TransportError);
  d.command = "echo 'not json'";
  const auto junk = make_backend(d)->invoke(req);
  CHECK_FALSE(junk.ok);
  std::filesystem::remove(tool);
}

TEST_CASE("run_process timeout") {
  const auto r = run_process("sleep 5", "", 100);
  CHECK(r.timed_out);
}
