#include "btsr/log.hpp"

#include <atomic>
#include <cstdio>
#include <mutex>

namespace btsr::log {

namespace {

std::atomic<Level> g_level{Level::Warn};
std::mutex g_mutex;

void emit(Level at, const char* tag, std::string_view message) {
    if (static_cast<int>(at) > static_cast<int>(g_level.load())) return;
    std::lock_guard lock(g_mutex);
    std::fprintf(stderr, "[%s] %.*s\n", tag, static_cast<int>(message.size()), message.data());
}

}  // namespace

void set_level(Level level) { g_level.store(level); }
Level level() { return g_level.load(); }

void warn(std::string_view message) { emit(Level::Warn, "warn", message); }
void info(std::string_view message) { emit(Level::Info, "info", message); }
void debug(std::string_view message) { emit(Level::Debug, "debug", message); }

}  // namespace btsr::log
