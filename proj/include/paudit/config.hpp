#pragma once

// Run configuration: one TOML or JSON document. Unknown keys are rejected
// with their source location; missing required keys are named.

#include <filesystem>
#include <string>
#include <vector>

#include "paudit/audit.hpp"
#include "paudit/backends.hpp"
#include "paudit/metrics.hpp"
#include "paudit/voting.hpp"

namespace paudit {

struct MetricsConfig {
  std::string denominator = "all";
  ExclusionPolicy exclusion = ExclusionPolicy::exclude;
  GenderSource gender_source = GenderSource::model_classified;
  SharePolicy share_policy = SharePolicy::all_items;
  std::filesystem::path verdicts;   // jury verdict CSV (ground truth), optional
  std::filesystem::path reference;  // published figures to cross-check, optional
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path static_dir;
};

struct Config {
  std::filesystem::path source;  // the file it was read from
  std::filesystem::path dataset;
  std::filesystem::path work_dir;
  std::filesystem::path report_dir;
  std::filesystem::path annotations;
  std::filesystem::path profiles;
  std::filesystem::path refusal_patterns;
  std::filesystem::path fluidity_phrases;

  std::vector<BackendDescriptor> backends;
  std::string default_backend;
  RunManifest run;  // dataset and backend_id filled from the fields above
  MitigationConfig mitigation;
  WeightPolicy weights;
  ServiceConfig service;
  MetricsConfig metrics;

  const BackendDescriptor& backend(const std::string& id) const;  // ConfigError
};

// Format by extension (.toml / .json). Relative paths resolve against the
// config file's directory.
Config load_config(const std::filesystem::path& path);
Config parse_config(std::string_view text, bool toml, const std::string& source_name,
                    const std::filesystem::path& base_dir);

// Defaults used when no config file is given.
Config default_config(const std::filesystem::path& base_dir);

std::string_view to_string(ExclusionPolicy p);
ExclusionPolicy exclusion_policy_from_string(std::string_view s);
GenderSource gender_source_from_string(std::string_view s);
SharePolicy share_policy_from_string(std::string_view s);

}  // namespace paudit
