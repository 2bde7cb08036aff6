#pragma once

#include <CLI11.hpp>

#include "bpmux/common/log.hpp"

namespace bpmux::tools {

// Exit codes shared by every tool.
inline constexpr int kOk = 0;
inline constexpr int kProtocolError = 1;
inline constexpr int kUsageError = 2;

inline int usage_exit(const CLI::App& app, const CLI::ParseError& e)
{
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
        app.exit(e);
        return kOk;
    }
    app.exit(e);
    return kUsageError;
}

inline log::Level parse_level(const std::string& s)
{
    if (s == "debug")
        return log::Level::Debug;
    if (s == "warn")
        return log::Level::Warn;
    if (s == "error")
        return log::Level::Error;
    return log::Level::Info;
}

} // namespace bpmux::tools
