#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace einv {

using json = nlohmann::json;

enum class ArtifactKind : std::uint32_t {
  model = 1,
  generator = 2,
  discriminator = 3,
  sample_batch = 4,
  report = 5,
};

std::string to_string(ArtifactKind kind);
ArtifactKind artifact_kind_from_string(const std::string& name);

inline constexpr std::uint32_t kArtifactFormatVersion = 1;

// Versioned binary container: magic, format version, kind, JSON header, payload.
// The header is dumped with sorted keys, so encoding is byte-stable.
struct ArtifactFile {
  ArtifactKind kind = ArtifactKind::model;
  json header = json::object();
  std::vector<std::byte> payload;
};

struct ArtifactEntry {
  std::string path;  // relative to the run directory when recorded in a manifest
  std::string sha256;
  std::string kind;
};

std::vector<std::byte> encode_artifact(const ArtifactFile& file);
ArtifactFile decode_artifact(std::span<const std::byte> bytes, const std::string& where);

// Writes through a temporary file and rename; returns the entry with the file hash.
ArtifactEntry write_artifact(const std::filesystem::path& path, const ArtifactFile& file);

// Reads and, when `expected_sha256` is given, verifies the file hash first.
ArtifactFile read_artifact(const std::filesystem::path& path,
                           const std::optional<std::string>& expected_sha256 = std::nullopt);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Verifies `path` against `expected_sha256`; throws CorruptionError on mismatch.
void verify_file_hash(const std::filesystem::path& path, const std::string& expected_sha256);

}  // namespace einv
