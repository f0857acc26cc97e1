#pragma once

// Shared domain types: images, personas, tasks, labels, outcomes and model
// responses. Everything here is an immutable value record.

#include <array>
#include <cstdint>
#include <compare>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "paudit/errors.hpp"

namespace paudit {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

// Lower-case hex SHA-256 of the bytes. Throws InvalidImage on empty input.
std::string content_hash(std::span<const std::uint8_t> image_bytes);
std::string content_hash(std::string_view image_bytes);

// SHA-256 of arbitrary text (prompt hashes, cache keys). Empty input allowed.
std::string sha256_hex(std::string_view text);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Persona
// ---------------------------------------------------------------------------

enum class GenderIdentity { control, woman, man, transgender, nonbinary };
enum class Race { control, asian, black, white, hispanic, native_american_alaska_native };

std::string_view to_string(GenderIdentity g);
std::string_view to_string(Race r);
GenderIdentity gender_identity_from_string(std::string_view s);
Race race_from_string(std::string_view s);

struct Persona {
  GenderIdentity gender_identity = GenderIdentity::control;
  Race race = Race::control;

  static constexpr Persona control() { return {}; }

  // control on one axis iff control on the other.
  constexpr bool valid() const {
    return (gender_identity == GenderIdentity::control) == (race == Race::control);
  }
  constexpr bool is_control() const { return gender_identity == GenderIdentity::control; }

  // "control" or "<race>_<gender_identity>", e.g. "asian_transgender".
  std::string id() const;
  static Persona from_id(std::string_view id);

  auto operator<=>(const Persona&) const = default;
};

// ---------------------------------------------------------------------------
// Tasks and labels
// ---------------------------------------------------------------------------

enum class TaskKind {
  gender_detection,
  gender_reasoning_female,
  gender_reasoning_male,
  gender_reasoning_unknown,
  emotion_classification,
  single_face_check,
};

std::string_view to_string(TaskKind t);
TaskKind task_from_string(std::string_view s);
bool is_reasoning_task(TaskKind t);
bool is_label_task(TaskKind t);

enum class GenderLabel : int { female = 0, male = 1 };
enum class EmotionLabel : int { angry = 1, disgust = 2, fear = 3, happy = 4, sad = 5, surprise = 6, neutral = 7 };

inline constexpr int code(GenderLabel g) { return static_cast<int>(g); }
inline constexpr int code(EmotionLabel e) { return static_cast<int>(e); }
std::optional<GenderLabel> gender_from_code(int c);
std::optional<EmotionLabel> emotion_from_code(int c);
std::string_view to_string(GenderLabel g);
std::string_view to_string(EmotionLabel e);
std::optional<GenderLabel> gender_from_name(std::string_view s);
std::optional<EmotionLabel> emotion_from_name(std::string_view s);

inline constexpr std::array<EmotionLabel, 7> kAllEmotions = {
    EmotionLabel::angry, EmotionLabel::disgust, EmotionLabel::fear,    EmotionLabel::happy,
    EmotionLabel::sad,   EmotionLabel::surprise, EmotionLabel::neutral};

// ---------------------------------------------------------------------------
// Outcome
// ---------------------------------------------------------------------------

struct GenderOutcome {
  GenderLabel label;
  bool operator==(const GenderOutcome&) const = default;
};
struct EmotionOutcome {
  EmotionLabel label;
  bool operator==(const EmotionOutcome&) const = default;
};
struct ReasoningOutcome {
  std::string text;
  bool operator==(const ReasoningOutcome&) const = default;
};
struct RefusalOutcome {
  std::string raw;
  bool operator==(const RefusalOutcome&) const = default;
};
struct MalformedOutcome {
  std::string raw;
  bool operator==(const MalformedOutcome&) const = default;
};
// Network or protocol failure. Never counted as a refusal.
struct TransportErrorOutcome {
  std::string detail;
  bool operator==(const TransportErrorOutcome&) const = default;
};

using Outcome = std::variant<GenderOutcome, EmotionOutcome, ReasoningOutcome, RefusalOutcome,
                             MalformedOutcome, TransportErrorOutcome>;

enum class OutcomeKind { gender, emotion, reasoning, refusal, malformed, transport_error };
inline OutcomeKind kind_of(const Outcome& o) { return static_cast<OutcomeKind>(o.index()); }
std::string_view to_string(OutcomeKind k);

inline bool is_refusal(const Outcome& o) { return std::holds_alternative<RefusalOutcome>(o); }
inline bool is_transport_error(const Outcome& o) {
  return std::holds_alternative<TransportErrorOutcome>(o);
}

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

enum class SingleFaceState { unreviewed, confirmed, rejected };
std::string_view to_string(SingleFaceState s);
SingleFaceState single_face_state_from_string(std::string_view s);

struct ImageItem {
  std::string id;
  std::string uri;
  std::string content_hash;
  std::string topic;
  std::optional<int> face_count;
  SingleFaceState single_face_validated = SingleFaceState::unreviewed;
  // Set when a reviewer confirmed an image whose face_count was not exactly 1.
  bool human_override = false;

  bool operator==(const ImageItem&) const = default;
};

// JSON-lines dataset manifest.
std::vector<ImageItem> load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, std::span<const ImageItem> items);

// ---------------------------------------------------------------------------
// Model responses
// ---------------------------------------------------------------------------

struct ModelResponse {
  std::string image_id;
  Persona persona;
  TaskKind task = TaskKind::gender_detection;
  std::string backend_id;
  int attempt_index = 1;
  std::string prompt_variant = "base";  // "base" or "disclaimer"
  std::string prompt_hash;
  std::string raw_text;
  Outcome outcome;
  double latency_ms = 0.0;
  std::string received_at;  // ISO-8601 UTC

  bool operator==(const ModelResponse&) const = default;
};

std::string utc_timestamp_now();

// JSON conversions (ADL hooks for nlohmann::json).
void to_json(json& j, const Persona& p);
void from_json(const json& j, Persona& p);
void to_json(json& j, const Outcome& o);
void from_json(const json& j, Outcome& o);
void to_json(json& j, const ImageItem& i);
void from_json(const json& j, ImageItem& i);
void to_json(json& j, const ModelResponse& r);
void from_json(const json& j, ModelResponse& r);

}  // namespace paudit
