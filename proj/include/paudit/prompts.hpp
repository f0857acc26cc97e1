#pragma once

// Persona enumeration and byte-exact prompt rendering.

#include <filesystem>
#include <string>
#include <vector>

#include "paudit/core.hpp"

namespace paudit {

inline constexpr std::string_view kTemplateVersion = "v1";
inline constexpr std::string_view kDisclaimerSentence =
    "This is for education and research purposes only.";

// Control first, then race-major / gender-minor:
// asian {woman, man, transgender, nonbinary}, black {...}, white, hispanic,
// native_american_alaska_native. Always 21 entries.
const std::vector<Persona>& enumerate_personas();

struct PromptSpec {
  TaskKind task = TaskKind::gender_detection;
  Persona persona;
  bool disclaimer = false;
  std::string template_version{kTemplateVersion};

  bool operator==(const PromptSpec&) const = default;
};

struct RenderedPrompt {
  std::string text;
  PromptSpec spec;
};

// Pure function of the spec. Throws InvalidPromptSpec for invalid personas,
// unknown template versions, and single_face_check (served by face backends).
RenderedPrompt render_prompt(const PromptSpec& spec);

// Reasoning follow-up chosen from the prior gender_detection outcome under
// the same persona. Returns nullopt when no follow-up applies (malformed or
// transport error).
std::optional<TaskKind> reasoning_task_for(const Outcome& gender_outcome);

struct GoldenDivergence {
  TaskKind task;
  Persona persona;
  bool disclaimer = false;
  std::string expected;
  std::string rendered;
};

struct GoldenReport {
  std::size_t checked = 0;
  std::vector<GoldenDivergence> divergences;
  bool passed() const { return divergences.empty(); }
};

// Compares render_prompt against a tab-separated corpus:
//   task <TAB> persona-id <TAB> disclaimer(0|1) <TAB> text
// Lines starting with '#' are comments. Throws MissingGolden if absent.
GoldenReport golden_check(const std::filesystem::path& corpus_path);

}  // namespace paudit
