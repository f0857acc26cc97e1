#include <doctest.h>

#include <filesystem>
#include <set>

#include "paudit/core.hpp"
#include "paudit/prompts.hpp"

using namespace paudit;

TEST_CASE("content_hash is deterministic and byte-sensitive") {
  // Expected digests computed with Python hashlib.sha256.
  CHECK(content_hash(std::string_view("\x89PNG-fixture-0")) ==
        "c32102a3f703f310b2697dd8c5991a9f116a667a8f056dd44057d7f096478cff");
  CHECK(content_hash(std::string_view("\x89PNG-fixture-1")) ==
        "e409c0ce6ed9b179a19451a5d1bc90c50c6a5b4bfaf605ab4fc394c09c5d850d");

  const std::vector<std::uint8_t> bytes{1, 2, 3, 4};
  CHECK(content_hash(bytes) == content_hash(bytes));
}

TEST_CASE("content_hash rejects empty input") {
  CHECK_THROWS_AS(content_hash(std::string_view{}), InvalidImage);
  CHECK_THROWS_AS(content_hash(std::span<const std::uint8_t>{}), InvalidImage);
}

TEST_CASE("persona ids round-trip for every valid persona") {
  std::set<std::string> ids;
  for (const auto& p : enumerate_personas()) {
    CHECK(p.valid());
    CHECK(Persona::from_id(p.id()) == p);
    const json j = p;
    CHECK(j.get<Persona>() == p);
    ids.insert(p.id());
  }
  CHECK(ids.size() == 21);
  CHECK(Persona::from_id("native_american_alaska_native_nonbinary") ==
        Persona{GenderIdentity::nonbinary, Race::native_american_alaska_native});
  CHECK_THROWS_AS(Persona::from_id("asian_control"), InvalidInput);
  CHECK_THROWS_AS(Persona::from_id("martian_woman"), InvalidInput);
  CHECK_FALSE((Persona{GenderIdentity::woman, Race::control}).valid());
}

TEST_CASE("label codes round-trip through integers") {
  CHECK(code(GenderLabel::female) == 0);
  CHECK(code(GenderLabel::male) == 1);
  for (int c = 0; c <= 1; ++c) CHECK(code(*gender_from_code(c)) == c);
  for (int c = 1; c <= 7; ++c) CHECK(code(*emotion_from_code(c)) == c);
  CHECK_FALSE(gender_from_code(2));
  CHECK_FALSE(emotion_from_code(0));
  CHECK_FALSE(emotion_from_code(8));
  CHECK(code(EmotionLabel::happy) == 4);
  CHECK(code(EmotionLabel::neutral) == 7);
}

TEST_CASE("outcome JSON keeps variant tag and verbatim text") {
  const std::vector<Outcome> outcomes{
      GenderOutcome{GenderLabel::male},         EmotionOutcome{EmotionLabel::sad},
      ReasoningOutcome{"long hair"},            RefusalOutcome{"Sorry, I can't.\n"},
      MalformedOutcome{"I think 1"},            TransportErrorOutcome{"HTTP 503"},
  };
  std::set<std::size_t> kinds;
  for (const auto& o : outcomes) {
    const json j = o;
    CHECK(j.get<Outcome>() == o);
    kinds.insert(o.index());
  }
  CHECK(kinds.size() == 6);
  CHECK_FALSE(is_refusal(TransportErrorOutcome{"timeout"}));
}

TEST_CASE("manifest round-trips through JSON lines") {
  const auto dir = std::filesystem::temp_directory_path() / "paudit_core_manifest";
  std::filesystem::create_directories(dir);
  std::vector<ImageItem> items{
      {"img-1", "a.jpg", "aa", "vaccination", 1, SingleFaceState::confirmed, false},
      {"img-2", "b.jpg", "bb", "climate", std::nullopt, SingleFaceState::unreviewed, false},
      {"img-3", "c.jpg", "cc", "climate", 2, SingleFaceState::confirmed, true},
  };
  save_manifest(dir / "m.jsonl", items);
  CHECK(load_manifest(dir / "m.jsonl") == items);
  std::filesystem::remove_all(dir);
}

TEST_CASE("model response JSON round-trip") {
  ModelResponse r;
  r.image_id = "img-9";
  r.persona = Persona{GenderIdentity::transgender, Race::white};
  r.task = TaskKind::gender_reasoning_unknown;
  r.backend_id = "gpt";
  r.attempt_index = 3;
  r.prompt_variant = "disclaimer";
  r.prompt_hash = sha256_hex("p");
  r.raw_text = "Sorry I could not assist.";
  r.outcome = RefusalOutcome{r.raw_text};
  r.latency_ms = 12.5;
  r.received_at = "2024-01-01T00:00:00.000Z";
  const json j = r;
  CHECK(j.get<ModelResponse>() == r);
}
