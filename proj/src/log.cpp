#include "gquant/log.hpp"

#include <iostream>
#include <mutex>
#include <string>
#include <utility>

namespace gquant {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

LogSink& sink_slot() {
  static LogSink sink;
  return sink;
}

void emit(LogLevel level, std::string_view message) {
  std::lock_guard lock(sink_mutex());
  if (const auto& sink = sink_slot()) {
    sink(level, message);
  } else if (level == LogLevel::Warn) {
    std::cerr << "warning: " << message << '\n';
  }
}

}  // namespace

LogSink set_log_sink(LogSink sink) {
  std::lock_guard lock(sink_mutex());
  return std::exchange(sink_slot(), std::move(sink));
}

void log_info(std::string_view message) { emit(LogLevel::Info, message); }
void log_warn(std::string_view message) { emit(LogLevel::Warn, message); }

}  // namespace gquant
