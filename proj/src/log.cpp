#include "rbs/log.hpp"

#include <cstdlib>
#include <iostream>
#include <string_view>

namespace rbs::log {
namespace {

Level parse_env() {
  const char* raw = std::getenv("RBS_LOG_LEVEL");
  if (raw == nullptr) return Level::Warn;
  std::string_view v(raw);
  if (v == "error") return Level::Error;
  if (v == "info") return Level::Info;
  if (v == "debug") return Level::Debug;
  return Level::Warn;
}

Level& current() {
  static Level level = parse_env();
  return level;
}

constexpr const char* kNames[] = {"error", "warn", "info", "debug"};

}  // namespace

Level threshold() { return current(); }
void set_threshold(Level level) { current() = level; }

void write(Level level, const std::string& message) {
  if (static_cast<int>(level) > static_cast<int>(current())) return;
  std::cerr << "[" << kNames[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace rbs::log
