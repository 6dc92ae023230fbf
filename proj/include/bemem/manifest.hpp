#pragma once

// Run manifest: config hash, per-stage completion records and the SHA-256 of
// every file a stage emitted. Stored as JSON at <run>/manifest.json.

#include "bemem/config.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace bemem {

inline constexpr const char* kToolVersion = "bemem 1.0";

class PrerequisiteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StageRecord {
  std::map<std::string, std::string> files;  // run-relative path -> sha256
  std::map<std::string, std::string> notes;
};

struct RunManifest {
  std::string tool_version = kToolVersion;
  std::string config_hash;
  std::string config_text;
  std::map<std::string, StageRecord> stages;
  std::map<std::string, double> thresholds;

  static std::filesystem::path path_in(const std::filesystem::path& run) { return run / "manifest.json"; }
  void save(const std::filesystem::path& run) const;
  static RunManifest load(const std::filesystem::path& run);
};

/// Stage order; completing a stage drops the records of every later stage.
const std::vector<std::string>& stage_order();

/// Loads the manifest and checks the config hash, that `stage`'s
/// prerequisites completed, and that their files still match their digests.
RunManifest require_stages(const std::filesystem::path& run, const RunConfig& cfg,
                           const std::vector<std::string>& prerequisites);

/// Digests `files` (run-relative) and records `stage` as complete.
void complete_stage(RunManifest& m, const std::filesystem::path& run, const std::string& stage,
                    const std::vector<std::string>& files, std::map<std::string, std::string> notes = {});

/// Re-digests every recorded file; returns the first mismatch or an empty string.
std::string verify_manifest(const RunManifest& m, const std::filesystem::path& run);

}  // namespace bemem
