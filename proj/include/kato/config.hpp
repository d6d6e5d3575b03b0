#pragma once

#include "kato/engine.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace kato {

struct TransferSettings {
  bool enabled = false;
  /// Checkpoint written by make-source and read by run.
  std::filesystem::path source;
  /// Used by make-source.
  std::string source_problem;
  int source_samples = 200;
  std::uint64_t source_seed = 0;
};

struct OutputSettings {
  std::filesystem::path dir = "kato-out";
  bool checkpoint = true;
};

/// Everything a run needs, parsed from one JSON file with the sections
/// problem, engine, transfer and output.
struct ExperimentConfig {
  RunConfig run;
  /// FOM sampling used when mode is fom and no spec is given inline.
  int fom_samples = 1000;
  std::uint64_t fom_seed = 0;
  TransferSettings transfer;
  OutputSettings output;
};

inline constexpr const char* kVersion = KATO_VERSION;

/// Parses and validates a config. Relative paths resolve against base_dir;
/// problems named without a path are looked up in problem_dir. Unknown keys
/// and bad values throw ConfigError naming the field.
[[nodiscard]] ExperimentConfig parse_config(const std::string& text,
                                            const std::filesystem::path& base_dir,
                                            const std::filesystem::path& problem_dir);
[[nodiscard]] ExperimentConfig load_config(const std::filesystem::path& path,
                                           const std::filesystem::path& problem_dir);

/// Fully resolved config (problem and FOM spec inline) that parse_config accepts
/// and that reproduces the run.
[[nodiscard]] std::string config_to_json(const ExperimentConfig& cfg);

/// Resolved config wrapped with the seed and library version. parse_config
/// accepts a manifest in place of a config.
[[nodiscard]] std::string manifest_to_json(const ExperimentConfig& cfg);

}  // namespace kato
