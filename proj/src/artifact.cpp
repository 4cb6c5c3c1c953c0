#include "einv/artifact.hpp"

#include <array>
#include <fstream>

#include "einv/error.hpp"
#include "einv/hash.hpp"
#include "einv/serialize.hpp"

namespace einv {

namespace {
constexpr std::array<char, 4> kMagic = {'E', 'I', 'N', 'V'};
}

std::string to_string(ArtifactKind kind) {
  switch (kind) {
    case ArtifactKind::model: return "model";
    case ArtifactKind::generator: return "generator";
    case ArtifactKind::discriminator: return "discriminator";
    case ArtifactKind::sample_batch: return "sample_batch";
    case ArtifactKind::report: return "report";
  }
  return "unknown";
}

ArtifactKind artifact_kind_from_string(const std::string& name) {
  for (auto k : {ArtifactKind::model, ArtifactKind::generator, ArtifactKind::discriminator, ArtifactKind::sample_batch,
                 ArtifactKind::report}) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("unknown artifact kind '" + name + "'");
}

std::vector<std::byte> encode_artifact(const ArtifactFile& file) {
  ByteWriter out;
  out.bytes(std::as_bytes(std::span(kMagic)));
  out.u32(kArtifactFormatVersion);
  out.u32(static_cast<std::uint32_t>(file.kind));
  const auto header = file.header.dump();
  out.u64(header.size());
  out.bytes(std::as_bytes(std::span(header.data(), header.size())));
  out.u64(file.payload.size());
  out.bytes(file.payload);
  return std::move(out).take();
}

ArtifactFile decode_artifact(std::span<const std::byte> bytes, const std::string& where) {
  ByteReader in(bytes, where);
  auto magic = in.bytes(kMagic.size());
  if (std::memcmp(magic.data(), kMagic.data(), kMagic.size()) != 0) {
    throw CorruptionError("not an einv artifact: " + where);
  }
  const auto version = in.u32();
  if (version != kArtifactFormatVersion) {
    throw CorruptionError("unsupported artifact format version " + std::to_string(version) + " in " + where);
  }
  ArtifactFile file;
  file.kind = static_cast<ArtifactKind>(in.u32());
  const auto header_len = in.u64();
  auto header = in.bytes(header_len);
  try {
    file.header = json::parse(std::string_view(reinterpret_cast<const char*>(header.data()), header.size()));
  } catch (const json::exception& e) {
    throw CorruptionError("malformed artifact header in " + where + ": " + e.what());
  }
  const auto payload_len = in.u64();
  auto payload = in.bytes(payload_len);
  file.payload.assign(payload.begin(), payload.end());
  if (!in.done()) throw CorruptionError("trailing bytes in " + where);
  return file;
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<std::byte> data(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("failed reading " + path.string());
  return data;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::as_bytes(std::span(text.data(), text.size())));
}

ArtifactEntry write_artifact(const std::filesystem::path& path, const ArtifactFile& file) {
  const auto bytes = encode_artifact(file);
  write_file_bytes(path, bytes);
  return {path.string(), sha256_hex(bytes), to_string(file.kind)};
}

void verify_file_hash(const std::filesystem::path& path, const std::string& expected_sha256) {
  const auto actual = sha256_file(path);
  if (actual != expected_sha256) throw CorruptionError(path.string(), expected_sha256, actual);
}

ArtifactFile read_artifact(const std::filesystem::path& path, const std::optional<std::string>& expected_sha256) {
  const auto bytes = read_file_bytes(path);
  if (expected_sha256) {
    const auto actual = sha256_hex(bytes);
    if (actual != *expected_sha256) throw CorruptionError(path.string(), *expected_sha256, actual);
  }
  return decode_artifact(bytes, path.string());
}

}  // namespace einv
