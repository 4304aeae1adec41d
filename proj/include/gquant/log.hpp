#pragma once

#include <functional>
#include <string_view>

namespace gquant {

enum class LogLevel { Info, Warn };

using LogSink = std::function<void(LogLevel, std::string_view)>;

/// Replaces the process-wide sink and returns the previous one. An empty sink
/// restores the default, which writes warnings to stderr and drops info.
LogSink set_log_sink(LogSink sink);

void log_info(std::string_view message);
void log_warn(std::string_view message);

}  // namespace gquant
