#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "euda/trainer.hpp"

namespace euda {

inline constexpr const char* kToolVersion = "0.1.0";

struct DatasetEntry {
  std::string role;  // "source", "target"
  std::filesystem::path path;
  std::string sha256;  // lowercase hex
};

struct ArtifactEntry {
  std::string role;  // "checkpoint", "metrics"
  std::filesystem::path path;
};

// Everything needed to reproduce a training run.
struct RunManifest {
  TrainConfig config;
  std::vector<DatasetEntry> datasets;
  std::vector<ArtifactEntry> artifacts;
  std::string tool_version = kToolVersion;
};

std::string sha256_file(const std::filesystem::path& path);

void save_manifest(const RunManifest& manifest, const std::filesystem::path& path);

// Reads the manifest and recomputes every dataset digest; throws DataError if
// a dataset changed since the run.
RunManifest load_manifest(const std::filesystem::path& path);

}  // namespace euda
