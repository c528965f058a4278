#pragma once

#include <sstream>
#include <string>
#include <string_view>

namespace geoproxy::log {

enum class Level { debug = 0, info = 1, warn = 2 };

// Reads GEOPROXY_LOG once; defaults to info.
Level threshold();
void set_threshold(Level level);

// Emits "<UTC timestamp> <LEVEL> stage=<stage> <message>" on stderr.
void write(Level level, std::string_view stage, std::string_view message);

template <typename... Args>
void emit(Level level, std::string_view stage, const Args&... args) {
    if (level < threshold()) return;
    std::ostringstream os;
    (os << ... << args);
    write(level, stage, os.str());
}

template <typename... Args>
void debug(std::string_view stage, const Args&... args) { emit(Level::debug, stage, args...); }
template <typename... Args>
void info(std::string_view stage, const Args&... args) { emit(Level::info, stage, args...); }
template <typename... Args>
void warn(std::string_view stage, const Args&... args) { emit(Level::warn, stage, args...); }

}  // namespace geoproxy::log
