#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "einv/artifact.hpp"

namespace einv {

// Rounds to 6 decimals (the precision of every persisted metric).
double round6(double value);
// Applies round6 to every floating-point number inside `value`.
json rounded(const json& value);

std::string utc_timestamp();

// Directory layout of one run: manifest.json plus models/, samples/, reports/, plots/.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path models() const { return root / "models"; }
  std::filesystem::path samples() const { return root / "samples"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path plots() const { return root / "plots"; }

  void create() const;
};

struct RunManifest {
  std::string run_id;
  json config = json::object();
  std::map<std::string, std::string> inputs;  // input name -> content hash
  std::vector<ArtifactEntry> artifacts;
  json metrics = json::object();
  json stages = json::object();  // stage cache key -> {stage, outputs, status}
  json status = json::object();  // {"state": running|complete|failed, "failed_stage", "error"}
  std::string created_at;
  std::string updated_at;

  json to_json() const;
  static RunManifest from_json(const json& j);

  void save(const std::filesystem::path& run_dir);
  static RunManifest load(const std::filesystem::path& run_dir);
  static bool exists(const std::filesystem::path& run_dir);

  const ArtifactEntry* find(const std::string& relative_path) const;
  // Records `entry` with its path made relative to `run_dir`; replaces an existing entry.
  void record(const std::filesystem::path& run_dir, ArtifactEntry entry);

  // Re-hashes every listed artifact; throws CorruptionError on the first mismatch.
  void verify(const std::filesystem::path& run_dir) const;
};

}  // namespace einv
