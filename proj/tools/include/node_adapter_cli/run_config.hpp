#pragma once

// Flat `key = value` run configuration shared by the subcommands. Every key
// is also a command-line flag (`--key-name`, underscores become dashes);
// values from --config are applied first, so explicit flags win.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "node_adapter/synthetic.hpp"
#include "node_adapter/trainer.hpp"

namespace node_adapter::cli {

struct RunConfig {
  data::SyntheticSpec synth;  // synth.seed is taken from `seed`
  train::TrainConfig train;   // train.solver is assembled from the fields below
  std::string solver = "rk4";
  int steps = 30;
  double t0 = 0.0;
  std::optional<double> tm;  // unset: the horizon
  std::uint64_t seed = 1;
  std::uint32_t way = 5;
  std::uint32_t shot = 1;
  std::uint32_t episodes = 10;
  std::string variant = "TP+VP+NODE";

  RunConfig();
  data::SyntheticSpec synth_spec() const;
  /// Resolved and validated; throws UsageError.
  train::TrainConfig train_config() const;
};

struct ConfigKey {
  const char* key;
  const char* help;
  /// Throws UsageError("<key>: ...") for malformed or out-of-range values.
  void (*set)(RunConfig&, std::string_view value);
  std::string (*get)(const RunConfig&);
};

std::span<const ConfigKey> config_keys();
const ConfigKey* find_key(std::string_view key);

struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// Blank lines and lines starting with '#' are skipped; everything else must
/// be `key = value` with a known key. Throws UsageError naming the line.
std::vector<ConfigEntry> parse_config(std::string_view text);
std::vector<ConfigEntry> read_config(const std::filesystem::path& path);
void apply_config(RunConfig& cfg, std::span<const ConfigEntry> entries);

}  // namespace node_adapter::cli
