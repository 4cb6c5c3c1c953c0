#include "einv/manifest.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>

#include "einv/error.hpp"
#include "einv/hash.hpp"

namespace einv {

double round6(double value) {
  if (!std::isfinite(value)) return value;
  const double r = std::round(value * 1e6) / 1e6;
  return r == 0.0 ? 0.0 : r;  // no "-0.0" in reports
}

json rounded(const json& value) {
  if (value.is_number_float()) return round6(value.get<double>());
  if (value.is_array() || value.is_object()) {
    json out = value;
    for (auto it = out.begin(); it != out.end(); ++it) *it = rounded(*it);
    return out;
  }
  return value;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void RunLayout::create() const {
  for (const auto& p : {root, models(), samples(), reports(), plots()}) std::filesystem::create_directories(p);
}

json RunManifest::to_json() const {
  json arts = json::array();
  for (const auto& a : artifacts) arts.push_back({{"path", a.path}, {"sha256", a.sha256}, {"kind", a.kind}});
  return {{"run_id", run_id},
          {"config", config},
          {"inputs", inputs},
          {"artifacts", arts},
          {"metrics", rounded(metrics)},
          {"stages", stages},
          {"status", status},
          {"timestamps", {{"created", created_at}, {"updated", updated_at}}}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  try {
    m.run_id = j.at("run_id").get<std::string>();
    m.config = j.value("config", json::object());
    m.inputs = j.value("inputs", std::map<std::string, std::string>{});
    for (const auto& a : j.at("artifacts")) {
      m.artifacts.push_back({a.at("path").get<std::string>(), a.at("sha256").get<std::string>(),
                             a.at("kind").get<std::string>()});
    }
    m.metrics = j.value("metrics", json::object());
    m.stages = j.value("stages", json::object());
    m.status = j.value("status", json::object());
    if (j.contains("timestamps")) {
      m.created_at = j["timestamps"].value("created", "");
      m.updated_at = j["timestamps"].value("updated", "");
    }
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void RunManifest::save(const std::filesystem::path& run_dir) {
  if (created_at.empty()) created_at = utc_timestamp();
  updated_at = utc_timestamp();
  write_text_file(RunLayout{run_dir}.manifest(), to_json().dump(2) + "\n");
}

bool RunManifest::exists(const std::filesystem::path& run_dir) {
  return std::filesystem::exists(RunLayout{run_dir}.manifest());
}

RunManifest RunManifest::load(const std::filesystem::path& run_dir) {
  const auto path = RunLayout{run_dir}.manifest();
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CorruptionError("malformed manifest " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

const ArtifactEntry* RunManifest::find(const std::string& relative_path) const {
  for (const auto& a : artifacts) {
    if (a.path == relative_path) return &a;
  }
  return nullptr;
}

void RunManifest::record(const std::filesystem::path& run_dir, ArtifactEntry entry) {
  std::filesystem::path p(entry.path);
  if (p.is_absolute() || p.string().rfind(run_dir.string(), 0) == 0) {
    entry.path = std::filesystem::relative(p, run_dir).generic_string();
  }
  for (auto& a : artifacts) {
    if (a.path == entry.path) {
      a = std::move(entry);
      return;
    }
  }
  artifacts.push_back(std::move(entry));
}

void RunManifest::verify(const std::filesystem::path& run_dir) const {
  for (const auto& a : artifacts) verify_file_hash(run_dir / a.path, a.sha256);
}

}  // namespace einv
