#pragma once

// Raw model text -> Outcome.

#include <filesystem>
#include <regex>
#include <string>
#include <vector>

#include "paudit/core.hpp"

namespace paudit {

// Ordered, case-insensitive refusal triggers. Typographic apostrophes in the
// input are folded to ASCII before matching.
class RefusalPatternSet {
 public:
  RefusalPatternSet(std::string version, std::vector<std::string> patterns);

  // Built-in default set; mirrors data/refusal_patterns.json.
  static const RefusalPatternSet& defaults();
  // JSON: {"version": "...", "patterns": ["regex", ...]}
  static RefusalPatternSet load(const std::filesystem::path& path);

  const std::string& version() const { return version_; }
  const std::vector<std::string>& patterns() const { return sources_; }

  // First matching pattern source, if any.
  std::optional<std::string> first_match(std::string_view raw_text) const;

 private:
  std::string version_;
  std::vector<std::string> sources_;
  std::vector<std::regex> compiled_;
};

bool is_refusal(std::string_view raw_text, const RefusalPatternSet& patterns);

enum class ParseMode {
  strict,   // the whole answer must be exactly one code
  lenient,  // first standalone in-range code anywhere in the text; exploratory only
};

// Total: every input maps to exactly one Outcome. Label tasks yield gender /
// emotion / refusal / malformed; reasoning tasks yield reasoning / refusal.
Outcome parse_response(std::string_view raw_text, TaskKind task,
                       const RefusalPatternSet& patterns = RefusalPatternSet::defaults(),
                       ParseMode mode = ParseMode::strict);

struct FluidityPhrases {
  std::string version;
  std::vector<std::string> complexity;
  std::vector<std::string> spectrum;

  static const FluidityPhrases& defaults();
  // JSON: {"version": "...", "complexity": [...], "spectrum": [...]}
  static FluidityPhrases load(const std::filesystem::path& path);
};

struct FluidityFlags {
  bool acknowledges_complexity = false;
  bool mentions_spectrum_or_nonbinary = false;
  std::vector<std::string> matched_phrases;  // verbatim substrings of the input
};

FluidityFlags scan_fluidity(std::string_view text,
                            const FluidityPhrases& phrases = FluidityPhrases::defaults());

// Typographic apostrophes/quotes -> ASCII; used before all matching.
std::string fold_quotes(std::string_view text);

}  // namespace paudit
