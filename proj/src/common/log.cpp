#include "bpmux/common/log.hpp"

#include <atomic>
#include <cstdio>
#include <mutex>

namespace bpmux::log {

namespace {
std::atomic<Level> g_level{Level::Info};
std::mutex g_write_mutex;

const char* prefix(Level level)
{
    switch (level) {
    case Level::Debug: return "DEBUG";
    case Level::Info: return "INFO";
    case Level::Warn: return "WARN";
    case Level::Error: return "ERROR";
    }
    return "?";
}
} // namespace

void set_level(Level level) { g_level.store(level); }
Level level() { return g_level.load(); }

void write(Level level, std::string_view component, std::string_view message)
{
    std::lock_guard lock(g_write_mutex);
    std::fprintf(stderr, "[%s] %.*s: %.*s\n", prefix(level),
                 static_cast<int>(component.size()), component.data(),
                 static_cast<int>(message.size()), message.data());
}

} // namespace bpmux::log
