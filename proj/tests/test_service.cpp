#include <doctest.h>

#include <httplib.h>

#include <fstream>
#include <thread>

#include "paudit/benchmark.hpp"
#include "paudit/service.hpp"
#include "synthetic.hpp"

using namespace paudit;

namespace {

struct Fixture {
  std::filesystem::path dir;
  std::unique_ptr<AnnotationService> service;
  int port = 0;

  explicit Fixture(const std::string& name, int images = 4, int unconfirmed = 1) {
    dir = synthetic::fresh_dir(name);
    synthetic::make_dataset(dir, images, unconfirmed);
    std::ofstream(dir / "profiles.csv") << "annotator_id,gender,race,experience_years,trained\n"
                                        << "ann-a,woman,asian,2,true\nann-b,man,white,5,false\n";
    ServiceOptions opt;
    opt.manifest = dir / "manifest.jsonl";
    opt.store = dir / "annotations.jsonl";
    opt.profiles = dir / "profiles.csv";
    service = std::make_unique<AnnotationService>(opt);
    port = service->start("127.0.0.1", 0);
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_connection_timeout(5);
    return c;
  }

  httplib::Result post(const json& body) const {
    auto c = client();
    return c.Post("/api/annotations", body.dump(), "application/json");
  }
};

json annotation(const std::string& who, const std::string& image, const std::string& task, const std::string& label,
                const std::string& ts = "2024-05-01T10:00:00Z") {
  return {{"annotator_id", who}, {"image_id", image}, {"task", task}, {"label", label}, {"timestamp", ts}};
}

}  // namespace

TEST_CASE("POST a valid annotation, then it appears in the export") {
  Fixture fx("svc_post");
  const auto r = fx.post(annotation("ann-a", "img-000", "gender", "female"));
  REQUIRE(r);
  CHECK(r->status == 201);
  CHECK(json::parse(r->body)["label"] == "female");

  AnnotationStore store(fx.dir / "annotations.jsonl");
  const auto records = store.records();
  REQUIRE(records.size() == 1);
  // Export matches what the CSV import path produces for the same row.
  const auto csv = annotations_to_csv(records);
  const auto imported = import_annotations_csv(std::string(kAnnotationHeader) +
                                               "\nann-a,img-000,gender,female,2024-05-01T10:00:00Z\n");
  CHECK(imported.errors.empty());
  CHECK(annotations_to_csv(imported.records) == csv);
}

TEST_CASE("invalid labels get 422 and unknown images 404") {
  Fixture fx("svc_errors");
  auto r = fx.post(annotation("ann-a", "img-000", "emotion", "8"));
  REQUIRE(r);
  CHECK(r->status == 422);
  CHECK(json::parse(r->body)["error"].get<std::string>().find("label") != std::string::npos);

  auto numeric = annotation("ann-a", "img-000", "emotion", "x");
  numeric["label"] = 8;
  r = fx.post(numeric);
  CHECK(r->status == 422);

  r = fx.post(annotation("ann-a", "img-000", "mood", "happy"));
  CHECK(r->status == 422);
  r = fx.post(annotation("", "img-000", "gender", "male"));
  CHECK(r->status == 422);
  r = fx.post(annotation("ann-a", "img-999", "gender", "male"));
  CHECK(r->status == 404);

  auto c = fx.client();
  r = c.Post("/api/annotations", "{not json", "application/json");
  CHECK(r->status == 400);
  CHECK(AnnotationStore(fx.dir / "annotations.jsonl").records().empty());
}

TEST_CASE("queue lists unlabeled eligible items per annotator") {
  Fixture fx("svc_queue", 4, 1);
  auto c = fx.client();
  auto r = c.Get("/api/queue?annotator=ann-a&task=gender");
  REQUIRE(r);
  REQUIRE(r->status == 200);
  auto j = json::parse(r->body);
  CHECK(j["items"].size() == 4);  // unconfirmed image excluded
  CHECK(j["items"][0]["image_id"] == "img-000");
  CHECK(j["items"][0]["url"] == "/api/images/img-000");
  CHECK(j["labels"] == json::array({"female", "male", "cannot_determine"}));

  fx.post(annotation("ann-a", "img-000", "gender", "male"));
  j = json::parse(c.Get("/api/queue?annotator=ann-a&task=gender")->body);
  CHECK(j["items"].size() == 3);
  CHECK(j["progress"]["done"] == 1);
  // Other annotators and tasks are unaffected.
  CHECK(json::parse(c.Get("/api/queue?annotator=ann-b&task=gender")->body)["items"].size() == 4);
  CHECK(json::parse(c.Get("/api/queue?annotator=ann-a&task=single_face")->body)["items"].size() == 5);
  CHECK(json::parse(c.Get("/api/queue?annotator=ann-a&task=gender&limit=2")->body)["items"].size() == 2);

  CHECK(c.Get("/api/queue?annotator=ann-a")->status == 400);
  CHECK(c.Get("/api/queue?annotator=ann-a&task=colour")->status == 422);
}

TEST_CASE("image bytes are served with a media type") {
  Fixture fx("svc_images");
  auto c = fx.client();
  auto r = c.Get("/api/images/img-001");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(r->body == "\x89PNG-synthetic-img-001");
  CHECK(r->get_header_value("Content-Type") == "image/png");
  CHECK(c.Get("/api/images/img-404")->status == 404);
}

TEST_CASE("disagreements list split cells with a tie flag, anonymized") {
  Fixture fx("svc_disagree");
  fx.post(annotation("ann-a", "img-000", "gender", "female"));
  fx.post(annotation("ann-b", "img-000", "gender", "male"));
  fx.post(annotation("ann-a", "img-001", "gender", "male"));
  fx.post(annotation("ann-b", "img-001", "gender", "male"));
  auto c = fx.client();
  auto j = json::parse(c.Get("/api/disagreements")->body);
  REQUIRE(j["items"].size() == 1);
  const auto& item = j["items"][0];
  CHECK(item["image_id"] == "img-000");
  CHECK(item["tie_flag"] == true);
  CHECK(item["labels"][0]["coder"] == "coder-1");
  CHECK(item["labels"].dump().find("ann-") == std::string::npos);
  const auto revealed = json::parse(c.Get("/api/disagreements?reveal=1")->body);
  CHECK(revealed["items"][0]["labels"][0]["coder"] == "ann-a");

  // A third, tie-breaking label still leaves a split cell, but no tie.
  fx.post(annotation("ann-c", "img-000", "gender", "male"));
  j = json::parse(c.Get("/api/disagreements")->body);
  REQUIRE(j["items"].size() == 1);
  CHECK(j["items"][0]["tie_flag"] == false);
  CHECK(j["items"][0]["verdict"] == "male");
  // Re-labelling to agreement clears it.
  fx.post(annotation("ann-a", "img-000", "gender", "male", "2024-05-02T10:00:00Z"));
  CHECK(json::parse(c.Get("/api/disagreements")->body)["items"].empty());
}

TEST_CASE("progress and annotators") {
  Fixture fx("svc_progress");
  fx.post(annotation("ann-a", "img-000", "gender", "female"));
  fx.post(annotation("ann-c", "img-000", "emotion", "happy"));
  auto c = fx.client();
  const auto p = json::parse(c.Get("/api/progress")->body);
  CHECK(p["images"] == 5);
  CHECK(p["tasks"]["gender"]["eligible"] == 4);
  CHECK(p["tasks"]["gender"]["annotations"] == 1);
  CHECK(p["annotators"]["ann-c"]["emotion"] == 1);
  const auto a = json::parse(c.Get("/api/annotators")->body);
  REQUIRE(a.size() == 3);
  CHECK(a[0]["annotator_id"] == "ann-a");
  CHECK(a[0]["annotations"] == 1);
  CHECK(a[1]["experience_years"] == 5.0);
  CHECK(a[2]["annotator_id"] == "ann-c");
}

TEST_CASE("concurrent posts are all stored") {
  Fixture fx("svc_concurrent", 8, 0);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 8; ++i) {
        fx.post(annotation("ann-" + std::to_string(t), synthetic::image_id(i), "gender", i % 2 ? "male" : "female"));
      }
    });
  }
  for (auto& th : threads) th.join();
  CHECK(AnnotationStore(fx.dir / "annotations.jsonl").records().size() == 32);
}

TEST_CASE("static assets are mounted when configured") {
  const auto dir = synthetic::fresh_dir("svc_static");
  synthetic::make_dataset(dir, 1);
  std::filesystem::create_directories(dir / "ui");
  std::ofstream(dir / "ui" / "index.html") << "<html>ok</html>";
  ServiceOptions opt;
  opt.manifest = dir / "manifest.jsonl";
  opt.store = dir / "annotations.jsonl";
  opt.static_dir = dir / "ui";
  AnnotationService service(opt);
  const int port = service.start("127.0.0.1", 0);
  httplib::Client c("127.0.0.1", port);
  auto r = c.Get("/index.html");
  REQUIRE(r);
  CHECK(r->body == "<html>ok</html>");
  service.stop();
}
