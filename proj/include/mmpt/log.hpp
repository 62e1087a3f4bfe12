#pragma once

#include <cstdio>
#include <string>

namespace mmpt {

enum class LogLevel { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3 };

inline LogLevel& log_threshold() {
    static LogLevel level = LogLevel::kInfo;
    return level;
}

inline void set_log_level(LogLevel level) { log_threshold() = level; }

inline LogLevel parse_log_level(const std::string& s) {
    if (s == "debug") return LogLevel::kDebug;
    if (s == "info") return LogLevel::kInfo;
    if (s == "warn") return LogLevel::kWarn;
    if (s == "error") return LogLevel::kError;
    return LogLevel::kInfo;
}

inline void log_line(LogLevel level, const std::string& msg) {
    if (level < log_threshold()) return;
    static const char* names[] = {"debug", "info", "warn", "error"};
    std::fprintf(stderr, "[%s] %s\n", names[static_cast<int>(level)], msg.c_str());
}

inline void log_debug(const std::string& msg) { log_line(LogLevel::kDebug, msg); }
inline void log_info(const std::string& msg) { log_line(LogLevel::kInfo, msg); }
inline void log_warn(const std::string& msg) { log_line(LogLevel::kWarn, msg); }
inline void log_error(const std::string& msg) { log_line(LogLevel::kError, msg); }

}  // namespace mmpt
