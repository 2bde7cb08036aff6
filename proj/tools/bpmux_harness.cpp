// bpmux-harness: runs scenario files and reports per scenario.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "bpmux/harness/harness.hpp"
#include "common.hpp"

using namespace bpmux;

int main(int argc, char** argv)
{
    CLI::App app{"bpmux scenario harness"};
    app.require_subcommand(1);
    std::vector<std::string> files;
    std::string junit;
    std::optional<std::uint64_t> seed;
    bool determinism = false;
    std::string level = "warn";
    auto* run = app.add_subcommand("run", "run scenario files");
    run->add_option("scenarios", files, "scenario JSON files")->required()->check(CLI::ExistingFile);
    run->add_option("--junit", junit, "write JUnit XML here");
    run->add_option("--seed", seed, "override the scenario seed");
    run->add_flag("--determinism", determinism, "run simulated-clock scenarios twice and compare the event logs");
    app.add_option("--log-level", level)->check(CLI::IsMember({"debug", "info", "warn", "error"}));
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return tools::usage_exit(app, e);
    }
    log::set_level(tools::parse_level(level));

    harness::RunOptions options;
    options.seed = seed;
    std::vector<harness::ScenarioResult> results;
    for (const auto& f : files) {
        harness::ScenarioResult r;
        try {
            r = harness::run_scenario_file(f, options);
            if (r.passed && determinism && r.simulated_clock) {
                const auto again = harness::run_scenario_file(f, options);
                if (!again.passed) {
                    r.passed = false;
                    r.failure = "second run failed: " + again.failure;
                } else if (again.event_log_text() != r.event_log_text()) {
                    r.passed = false;
                    r.failure = "event logs differ between two runs";
                }
            }
        } catch (const harness::ScenarioError& e) {
            std::cerr << "[ERROR] harness: " << e.what() << "\n";
            return tools::kUsageError;
        }
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.wall_time.count() << " ms real";
        if (r.simulated_ms)
            std::cout << ", " << r.simulated_ms << " ms simulated";
        std::cout << ")";
        if (!r.passed)
            std::cout << ": " << r.failure;
        std::cout << "\n";
        results.push_back(std::move(r));
    }
    if (!junit.empty()) {
        std::ofstream out(junit);
        out << harness::to_junit(results);
    }
    for (const auto& r : results)
        if (!r.passed)
            return tools::kProtocolError;
    return tools::kOk;
}
