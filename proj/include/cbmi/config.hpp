#pragma once

#include "cbmi/decode.hpp"
#include "cbmi/model.hpp"
#include "cbmi/trainer.hpp"

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cbmi {

/// Invalid configuration; key() names the offending entry.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::invalid_argument("config key '" + key + "': " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct RunConfig {
  std::string profile = "en-de";  // en-de | zh-en: baseline hyperparameter sets
  std::string preset = "desk";    // desk | base | big: model and optimizer sizes
  ModelConfig model;              // vocabulary sizes are filled in from the data
  TrainConfig train;
  BeamConfig beam;
  std::size_t max_len = 64;
  int min_count = 1;
  bool share_vocab = false;
  int precision = 32;

  /// Throws ConfigError naming the first violated key.
  void validate() const;
};

enum class ValueType { integer, real, boolean, text };

struct ConfigKey {
  std::string name;  // snake_case in files, kebab-case as a flag
  ValueType type;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;

  std::string flag() const;
};

/// Every configurable key, in echo order.
const std::vector<ConfigKey>& config_keys();
const ConfigKey* find_key(const std::string& name);

/// Parsed "key=value" assignments in source order.
using Assignments = std::vector<std::pair<std::string, std::string>>;

/// Reads a key=value file ('#' comments, blank lines ignored). Unknown keys
/// are rejected with the file position.
Assignments read_config_file(const std::filesystem::path& path);

/// Defaults, then the profile and preset, then file assignments, then
/// overrides (flags). Keys the profile ties to the scheme (freq_t) are
/// resolved last unless set explicitly. The result is validated.
RunConfig resolve_config(const Assignments& file, const Assignments& overrides);

/// Convenience: an optional file path plus overrides.
RunConfig parse_config(const std::filesystem::path& path, const Assignments& overrides);

/// Effective configuration as key=value pairs in registry order. Feeding it
/// back through resolve_config reproduces the same RunConfig.
std::vector<std::pair<std::string, std::string>> echo_config(const RunConfig& config);

std::string format_real(double v);

}  // namespace cbmi
