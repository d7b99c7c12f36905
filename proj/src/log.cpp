#include "deco/log.hpp"

#include <atomic>
#include <iostream>

namespace deco {

namespace {
std::atomic<LogLevel> level{LogLevel::normal};
}

void set_log_level(LogLevel l) { level = l; }
LogLevel log_level() { return level; }

void log_warning(const std::string& message) {
    if (level != LogLevel::quiet) std::cerr << "warning: " << message << "\n";
}

void log_info(const std::string& message) {
    if (level == LogLevel::verbose) std::cerr << message << "\n";
}

}  // namespace deco
