#include "paudit/core.hpp"

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

namespace paudit {

namespace {

std::string digest_hex(const void* data, std::size_t size) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int md_len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data, size) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), md.data(), &md_len) != 1) {
    throw Error("sha256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(md_len * 2);
  for (unsigned int i = 0; i < md_len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xf]);
  }
  return out;
}

template <typename E, std::size_t N>
E lookup(const std::array<std::pair<E, std::string_view>, N>& table, std::string_view s,
         const char* what) {
  for (const auto& [value, name] : table) {
    if (name == s) return value;
  }
  throw InvalidInput(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, N>& table, E value) {
  for (const auto& [v, name] : table) {
    if (v == value) return name;
  }
  return "?";
}

constexpr std::array<std::pair<GenderIdentity, std::string_view>, 5> kGenderIdentities{{
    {GenderIdentity::control, "control"},
    {GenderIdentity::woman, "woman"},
    {GenderIdentity::man, "man"},
    {GenderIdentity::transgender, "transgender"},
    {GenderIdentity::nonbinary, "nonbinary"},
}};

constexpr std::array<std::pair<Race, std::string_view>, 6> kRaces{{
    {Race::control, "control"},
    {Race::asian, "asian"},
    {Race::black, "black"},
    {Race::white, "white"},
    {Race::hispanic, "hispanic"},
    {Race::native_american_alaska_native, "native_american_alaska_native"},
}};

constexpr std::array<std::pair<TaskKind, std::string_view>, 6> kTasks{{
    {TaskKind::gender_detection, "gender_detection"},
    {TaskKind::gender_reasoning_female, "gender_reasoning_female"},
    {TaskKind::gender_reasoning_male, "gender_reasoning_male"},
    {TaskKind::gender_reasoning_unknown, "gender_reasoning_unknown"},
    {TaskKind::emotion_classification, "emotion_classification"},
    {TaskKind::single_face_check, "single_face_check"},
}};

constexpr std::array<std::pair<GenderLabel, std::string_view>, 2> kGenders{{
    {GenderLabel::female, "female"},
    {GenderLabel::male, "male"},
}};

constexpr std::array<std::pair<EmotionLabel, std::string_view>, 7> kEmotions{{
    {EmotionLabel::angry, "angry"},
    {EmotionLabel::disgust, "disgust"},
    {EmotionLabel::fear, "fear"},
    {EmotionLabel::happy, "happy"},
    {EmotionLabel::sad, "sad"},
    {EmotionLabel::surprise, "surprise"},
    {EmotionLabel::neutral, "neutral"},
}};

constexpr std::array<std::pair<OutcomeKind, std::string_view>, 6> kOutcomeKinds{{
    {OutcomeKind::gender, "gender"},
    {OutcomeKind::emotion, "emotion"},
    {OutcomeKind::reasoning, "reasoning"},
    {OutcomeKind::refusal, "refusal"},
    {OutcomeKind::malformed, "malformed"},
    {OutcomeKind::transport_error, "transport_error"},
}};

constexpr std::array<std::pair<SingleFaceState, std::string_view>, 3> kFaceStates{{
    {SingleFaceState::unreviewed, "unreviewed"},
    {SingleFaceState::confirmed, "confirmed"},
    {SingleFaceState::rejected, "rejected"},
}};

}  // namespace

std::string content_hash(std::span<const std::uint8_t> image_bytes) {
  if (image_bytes.empty()) throw InvalidImage("image byte sequence is empty");
  return digest_hex(image_bytes.data(), image_bytes.size());
}

std::string content_hash(std::string_view image_bytes) {
  if (image_bytes.empty()) throw InvalidImage("image byte sequence is empty");
  return digest_hex(image_bytes.data(), image_bytes.size());
}

std::string sha256_hex(std::string_view text) { return digest_hex(text.data(), text.size()); }

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidImage("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string_view to_string(GenderIdentity g) { return name_of(kGenderIdentities, g); }
std::string_view to_string(Race r) { return name_of(kRaces, r); }
GenderIdentity gender_identity_from_string(std::string_view s) {
  return lookup(kGenderIdentities, s, "gender identity");
}
Race race_from_string(std::string_view s) { return lookup(kRaces, s, "race"); }

std::string Persona::id() const {
  if (is_control()) return "control";
  return std::string(to_string(race)) + "_" + std::string(to_string(gender_identity));
}

Persona Persona::from_id(std::string_view id) {
  if (id == "control") return control();
  // Race names may contain underscores; the gender identity is the last token.
  const auto pos = id.rfind('_');
  if (pos == std::string_view::npos) throw InvalidInput("bad persona id '" + std::string(id) + "'");
  Persona p{gender_identity_from_string(id.substr(pos + 1)), race_from_string(id.substr(0, pos))};
  if (!p.valid() || p.is_control()) throw InvalidInput("bad persona id '" + std::string(id) + "'");
  return p;
}

std::string_view to_string(TaskKind t) { return name_of(kTasks, t); }
TaskKind task_from_string(std::string_view s) { return lookup(kTasks, s, "task"); }

bool is_reasoning_task(TaskKind t) {
  return t == TaskKind::gender_reasoning_female || t == TaskKind::gender_reasoning_male ||
         t == TaskKind::gender_reasoning_unknown;
}

bool is_label_task(TaskKind t) {
  return t == TaskKind::gender_detection || t == TaskKind::emotion_classification;
}

std::optional<GenderLabel> gender_from_code(int c) {
  if (c == 0 || c == 1) return static_cast<GenderLabel>(c);
  return std::nullopt;
}

std::optional<EmotionLabel> emotion_from_code(int c) {
  if (c >= 1 && c <= 7) return static_cast<EmotionLabel>(c);
  return std::nullopt;
}

std::string_view to_string(GenderLabel g) { return name_of(kGenders, g); }
std::string_view to_string(EmotionLabel e) { return name_of(kEmotions, e); }

std::optional<GenderLabel> gender_from_name(std::string_view s) {
  for (const auto& [v, name] : kGenders)
    if (name == s) return v;
  return std::nullopt;
}

std::optional<EmotionLabel> emotion_from_name(std::string_view s) {
  for (const auto& [v, name] : kEmotions)
    if (name == s) return v;
  return std::nullopt;
}

std::string_view to_string(OutcomeKind k) { return name_of(kOutcomeKinds, k); }

std::string_view to_string(SingleFaceState s) { return name_of(kFaceStates, s); }
SingleFaceState single_face_state_from_string(std::string_view s) {
  return lookup(kFaceStates, s, "single-face state");
}

std::vector<ImageItem> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset manifest " + path.string());
  std::vector<ImageItem> items;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      items.push_back(json::parse(line).get<ImageItem>());
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return items;
}

void save_manifest(const std::filesystem::path& path, std::span<const ImageItem> items) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    for (const auto& item : items) out << json(item).dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
}

std::string utc_timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0') << ms
     << 'Z';
  return os.str();
}

// --- JSON ------------------------------------------------------------------

void to_json(json& j, const Persona& p) { j = p.id(); }
void from_json(const json& j, Persona& p) { p = Persona::from_id(j.get<std::string>()); }

void to_json(json& j, const Outcome& o) {
  j = json{{"kind", to_string(kind_of(o))}};
  std::visit(
      [&j](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, GenderOutcome>) {
          j["label"] = to_string(v.label);
        } else if constexpr (std::is_same_v<T, EmotionOutcome>) {
          j["label"] = to_string(v.label);
        } else if constexpr (std::is_same_v<T, ReasoningOutcome>) {
          j["text"] = v.text;
        } else if constexpr (std::is_same_v<T, TransportErrorOutcome>) {
          j["text"] = v.detail;
        } else {
          j["text"] = v.raw;
        }
      },
      o);
}

void from_json(const json& j, Outcome& o) {
  const auto kind = lookup(kOutcomeKinds, j.at("kind").get<std::string>(), "outcome kind");
  switch (kind) {
    case OutcomeKind::gender: {
      const auto g = gender_from_name(j.at("label").get<std::string>());
      if (!g) throw FormatError("bad gender label in outcome");
      o = GenderOutcome{*g};
      break;
    }
    case OutcomeKind::emotion: {
      const auto e = emotion_from_name(j.at("label").get<std::string>());
      if (!e) throw FormatError("bad emotion label in outcome");
      o = EmotionOutcome{*e};
      break;
    }
    case OutcomeKind::reasoning: o = ReasoningOutcome{j.at("text").get<std::string>()}; break;
    case OutcomeKind::refusal: o = RefusalOutcome{j.at("text").get<std::string>()}; break;
    case OutcomeKind::malformed: o = MalformedOutcome{j.at("text").get<std::string>()}; break;
    case OutcomeKind::transport_error:
      o = TransportErrorOutcome{j.at("text").get<std::string>()};
      break;
  }
}

void to_json(json& j, const ImageItem& i) {
  j = json{{"id", i.id},
           {"uri", i.uri},
           {"content_hash", i.content_hash},
           {"topic", i.topic},
           {"face_count", i.face_count ? json(*i.face_count) : json(nullptr)},
           {"single_face_validated", to_string(i.single_face_validated)}};
  if (i.human_override) j["human_override"] = true;
}

void from_json(const json& j, ImageItem& i) {
  i.id = j.at("id").get<std::string>();
  i.uri = j.value("uri", "");
  i.content_hash = j.value("content_hash", "");
  i.topic = j.value("topic", "");
  i.face_count.reset();
  if (j.contains("face_count") && !j.at("face_count").is_null()) {
    const int n = j.at("face_count").get<int>();
    if (n < 0) throw FormatError("negative face_count for image " + i.id);
    i.face_count = n;
  }
  i.single_face_validated =
      single_face_state_from_string(j.value("single_face_validated", std::string("unreviewed")));
  i.human_override = j.value("human_override", false);
}

void to_json(json& j, const ModelResponse& r) {
  j = json{{"image_id", r.image_id},
           {"persona", r.persona},
           {"task", to_string(r.task)},
           {"backend_id", r.backend_id},
           {"attempt_index", r.attempt_index},
           {"prompt_variant", r.prompt_variant},
           {"prompt_hash", r.prompt_hash},
           {"raw_text", r.raw_text},
           {"outcome", r.outcome},
           {"latency_ms", r.latency_ms},
           {"received_at", r.received_at}};
}

void from_json(const json& j, ModelResponse& r) {
  r.image_id = j.at("image_id").get<std::string>();
  r.persona = j.at("persona").get<Persona>();
  r.task = task_from_string(j.at("task").get<std::string>());
  r.backend_id = j.at("backend_id").get<std::string>();
  r.attempt_index = j.at("attempt_index").get<int>();
  r.prompt_variant = j.value("prompt_variant", "base");
  r.prompt_hash = j.value("prompt_hash", "");
  r.raw_text = j.at("raw_text").get<std::string>();
  r.outcome = j.at("outcome").get<Outcome>();
  r.latency_ms = j.value("latency_ms", 0.0);
  r.received_at = j.value("received_at", "");
}

}  // namespace paudit
