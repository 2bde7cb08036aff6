#pragma once

#include <sstream>
#include <string>
#include <string_view>

namespace bpmux::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3 };

void set_level(Level level);
Level level();

// Emits one level-prefixed line to stderr. Thread-safe.
void write(Level level, std::string_view component, std::string_view message);

namespace detail {
template <typename... Args>
std::string concat(Args&&... args)
{
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}
} // namespace detail

template <typename... Args>
void debug(std::string_view component, Args&&... args)
{
    if (level() <= Level::Debug)
        write(Level::Debug, component, detail::concat(std::forward<Args>(args)...));
}

template <typename... Args>
void info(std::string_view component, Args&&... args)
{
    if (level() <= Level::Info)
        write(Level::Info, component, detail::concat(std::forward<Args>(args)...));
}

template <typename... Args>
void warn(std::string_view component, Args&&... args)
{
    if (level() <= Level::Warn)
        write(Level::Warn, component, detail::concat(std::forward<Args>(args)...));
}

template <typename... Args>
void error(std::string_view component, Args&&... args)
{
    write(Level::Error, component, detail::concat(std::forward<Args>(args)...));
}

} // namespace bpmux::log
