#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sparseattn/data.hpp"
#include "sparseattn/model.hpp"
#include "sparseattn/trainer.hpp"

namespace sparseattn {

/// Everything a CLI run needs. Keys in config files and on the command line
/// share one vocabulary (the long flag names without the leading dashes).
struct RunConfig {
  std::string command;
  std::string model_kind = "sparse";  // "sparse" or "baseline"
  bool synthetic = false;
  std::string dataset;
  std::string manifest = "manifest.csv";
  std::string out = "run";
  std::uint64_t seed = 0;
  double train_fraction = 0.8;

  SyntheticSpec synth;
  ModelConfig model;
  TrainConfig train;

  void validate() const;
};

// Keys in the order they are echoed.
const std::vector<std::string>& config_keys();

// Parses key=value lines; '#' starts a comment, blank lines are skipped.
// Unknown keys and malformed lines raise ConfigError.
std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin);
std::map<std::string, std::string> read_config_file(const std::string& path);

// Applies one setting. Unknown keys or unparsable values raise ConfigError.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Defaults, then `file_kv`, then `flag_kv`. The seed falls back to the
/// SPARSEATTN_SEED environment value when neither source sets it. The seed is
/// propagated to the data generator, model and trainer.
RunConfig resolve_config(const std::map<std::string, std::string>& file_kv,
                         const std::map<std::string, std::string>& flag_kv,
                         std::optional<std::string> env_seed);

// key=value lines for every key, loadable by read_config_file.
std::string format_config(const RunConfig& cfg);

}  // namespace sparseattn
