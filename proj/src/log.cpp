#include "dogerm/log.hpp"

#include <cstdlib>
#include <iostream>

namespace dogerm {

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("DOGERM_LOG");
    if (env == nullptr) return LogLevel::Warn;
    const std::string v(env);
    if (v == "error") return LogLevel::Error;
    if (v == "warn") return LogLevel::Warn;
    if (v == "info") return LogLevel::Info;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Warn;
  }();
  return level;
}

void log(LogLevel level, const std::string& message) {
  if (level > log_level()) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::cerr << "[dogerm] " << names[static_cast<int>(level)] << ": " << message
            << std::endl;
}

}  // namespace dogerm
