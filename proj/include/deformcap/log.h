#pragma once

#include <sstream>
#include <string>

namespace deformcap {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

void set_log_level(LogLevel level);
LogLevel log_level();
LogLevel parse_log_level(const std::string& name);

void log_message(LogLevel level, const std::string& message);

template <typename... Args>
void log_at(LogLevel level, const Args&... args) {
  if (level < log_level()) {
    return;
  }
  std::ostringstream out;
  (out << ... << args);
  log_message(level, out.str());
}

template <typename... Args>
void log_debug(const Args&... args) {
  log_at(LogLevel::Debug, args...);
}
template <typename... Args>
void log_info(const Args&... args) {
  log_at(LogLevel::Info, args...);
}
template <typename... Args>
void log_warn(const Args&... args) {
  log_at(LogLevel::Warn, args...);
}

} // namespace deformcap
