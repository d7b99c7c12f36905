#pragma once

#include <string>

namespace deco {

enum class LogLevel { quiet, normal, verbose };

void set_log_level(LogLevel level);
LogLevel log_level();

// Both write one line to stderr. Warnings show unless quiet; info only when verbose.
void log_warning(const std::string& message);
void log_info(const std::string& message);

}  // namespace deco
