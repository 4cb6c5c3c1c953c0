#pragma once

#include <sstream>
#include <string>

namespace einv {

enum class LogLevel { quiet = 0, warn = 1, info = 2, debug = 3 };

// Process-wide verbosity; initialized from $EINV_LOG (quiet|warn|info|debug), default warn.
LogLevel log_level();
void set_log_level(LogLevel level);
void log_line(LogLevel level, const std::string& message);

template <typename... Args>
void log(LogLevel level, const Args&... args) {
  if (level > log_level()) return;
  std::ostringstream os;
  (os << ... << args);
  log_line(level, os.str());
}

template <typename... Args>
void log_info(const Args&... args) {
  log(LogLevel::info, args...);
}

template <typename... Args>
void log_warn(const Args&... args) {
  log(LogLevel::warn, args...);
}

}  // namespace einv
