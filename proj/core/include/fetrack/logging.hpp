#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace fetrack {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

/// Verbosity from FETRACK_LOG ("error", "info", "debug"); default info.
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("FETRACK_LOG");
    if (env == nullptr) return LogLevel::Info;
    if (std::strcmp(env, "error") == 0) return LogLevel::Error;
    if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
    return LogLevel::Info;
  }();
  return level;
}

template <typename... Args>
void log_info(const char* fmt, Args... args) {
  if (log_level() >= LogLevel::Info) {
    std::fprintf(stderr, "[fetrack] ");
    std::fprintf(stderr, fmt, args...);
    std::fprintf(stderr, "\n");
  }
}

template <typename... Args>
void log_debug(const char* fmt, Args... args) {
  if (log_level() >= LogLevel::Debug) {
    std::fprintf(stderr, "[fetrack:debug] ");
    std::fprintf(stderr, fmt, args...);
    std::fprintf(stderr, "\n");
  }
}

template <typename... Args>
void log_error(const char* fmt, Args... args) {
  std::fprintf(stderr, "[fetrack:error] ");
  std::fprintf(stderr, fmt, args...);
  std::fprintf(stderr, "\n");
}

}  // namespace fetrack
