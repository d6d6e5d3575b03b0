#pragma once

#include "kato/kat.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace kato {

inline constexpr int kCheckpointVersion = 1;

/// A trained source model saved once and reused across transfer runs, with the
/// names of the source problem and of the metric each source GP models.
struct SourceCheckpoint {
  std::string problem;
  std::vector<std::string> metric_names;
  KatGpModel model;
};

[[nodiscard]] std::string kernel_to_json(const Kernel& kernel);
[[nodiscard]] std::unique_ptr<Kernel> kernel_from_json(const std::string& text);

[[nodiscard]] std::string gp_to_json(const GpModel& model);
[[nodiscard]] GpModel gp_from_json(const std::string& text);

[[nodiscard]] std::string kat_model_to_json(const KatGpModel& model);
[[nodiscard]] KatGpModel kat_model_from_json(const std::string& text);

/// Versioned file; loading a different version or a malformed file is a SpecError.
void save_source_checkpoint(const std::filesystem::path& path, const SourceCheckpoint& source);
[[nodiscard]] SourceCheckpoint load_source_checkpoint(const std::filesystem::path& path);

}  // namespace kato
