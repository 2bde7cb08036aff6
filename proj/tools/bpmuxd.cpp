// bpmuxd: runs one node until SIGINT or SIGTERM.

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "bpmux/bpa/node.hpp"
#include "bpmux/common/log.hpp"
#include "common.hpp"

using namespace bpmux;

int main(int argc, char** argv)
{
    CLI::App app{"bpmux bundle node daemon"};
    std::string config_path;
    std::string level = "info";
    app.add_option("-c,--config", config_path, "node configuration (JSON)")->required()->check(CLI::ExistingFile);
    app.add_option("--log-level", level, "debug, info, warn or error")
        ->check(CLI::IsMember({"debug", "info", "warn", "error"}));
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return tools::usage_exit(app, e);
    }
    log::set_level(tools::parse_level(level));

    bpa::NodeConfig config;
    try {
        config = bpa::NodeConfig::load(config_path);
    } catch (const bpa::ConfigError& e) {
        log::error("bpmuxd", config_path, ": bad value at '", e.key(), "': ", e.what());
        return tools::kUsageError;
    }

    // Block the signals before any thread exists so only sigwait sees them.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    bpa::Node node(std::move(config));
    try {
        node.start();
    } catch (const std::exception& e) {
        log::error("bpmuxd", "cannot start: ", e.what());
        return tools::kProtocolError;
    }

    int sig = 0;
    sigwait(&signals, &sig);
    log::info("bpmuxd", "signal ", sig, ", shutting down");
    node.stop();
    return tools::kOk;
}
