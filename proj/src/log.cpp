#include "einv/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string_view>

namespace einv {

namespace {

LogLevel from_env() {
  const char* env = std::getenv("EINV_LOG");
  if (env == nullptr) return LogLevel::warn;
  const std::string_view v(env);
  if (v == "quiet") return LogLevel::quiet;
  if (v == "info") return LogLevel::info;
  if (v == "debug") return LogLevel::debug;
  return LogLevel::warn;
}

std::atomic<int>& level_storage() {
  static std::atomic<int> level{static_cast<int>(from_env())};
  return level;
}

}  // namespace

LogLevel log_level() { return static_cast<LogLevel>(level_storage().load()); }

void set_log_level(LogLevel level) { level_storage().store(static_cast<int>(level)); }

void log_line(LogLevel level, const std::string& message) {
  static std::mutex mu;
  const std::lock_guard lock(mu);
  std::cerr << (level == LogLevel::warn ? "warning: " : "") << message << '\n';
}

}  // namespace einv
