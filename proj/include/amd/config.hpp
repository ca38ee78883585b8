#pragma once

// Run configuration: one JSON file, validated before any work starts.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "amd/evaluation.hpp"
#include "amd/evolution.hpp"
#include "amd/mechanisms.hpp"
#include "amd/proposers.hpp"
#include "json.hpp"

namespace amd::cfg {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::vector<mech::SettingSpec> settings;  // "setting" or "settings"
  evo::EvolutionConfig evolution;
  std::string proposer = "symbolic";  // symbolic | llm
  prop::LlmEndpointConfig llm;
  std::string prompts_dir;            // empty: the shipped prompts/
  std::string strategies = "default"; // default | rediscovery | none
  std::size_t n_samples = 0;          // 0: the setting's default
  std::uint64_t eval_seed = 0;
  std::optional<std::uint64_t> seed;  // absent: drawn and printed
  std::string output_dir = "runs/latest";
  std::optional<std::string> resume;
  std::size_t workers = 1;
  std::optional<std::string> seed_program;
  std::size_t checkpoint_every = 10;

  /// Parses and validates; relative paths resolve against `base_dir`.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void validate() const;

  dsl::HeuristicSignature signature() const;
  std::filesystem::path resolved_prompts_dir() const;
};

/// Root of the shipped data (prompts/, data/); AMD_DATA_DIR overrides.
std::filesystem::path data_dir();

struct KeyDoc {
  std::string key;
  std::string default_value;
  std::string description;
};
/// Every config key with its default, for --help.
const std::vector<KeyDoc>& key_docs();
std::string key_help();

}  // namespace amd::cfg
