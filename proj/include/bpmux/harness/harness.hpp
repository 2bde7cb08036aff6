#pragma once

// Multi-node integration harness. A scenario is a JSON document naming a set
// of nodes (each a daemon config) and a list of steps run in order: link
// changes, sends, storage commands, restarts, dispatcher scripts and
// assertions. Nodes run in this process but are driven only through their
// AAP2 and MTCP sockets. docs/scenarios.md describes the format.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "bpmux/aap2/client.hpp"
#include "bpmux/bpa/node.hpp"

namespace bpmux::harness {

class ScenarioError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Route {
    /// Glob over the destination EID text.
    std::string pattern;
    dispatch::DispatchDecision decision;
};

/// Table-driven dispatcher module. Attaches to a node as the DISPATCH
/// holder and answers each request from the first matching route.
class ScriptedBdm {
public:
    ScriptedBdm(std::string target, std::string admin_secret, std::vector<Route> routes,
                dispatch::DispatchDecision fallback);
    ~ScriptedBdm();

    ScriptedBdm(const ScriptedBdm&) = delete;
    ScriptedBdm& operator=(const ScriptedBdm&) = delete;

    /// Throws ScenarioError if the node refuses the registration.
    void start();
    void stop();

    std::uint64_t requests() const { return requests_.load(); }
    std::vector<aap2::DispatchRequest> request_log() const;

    static dispatch::DispatchDecision decide(const std::vector<Route>& routes,
                                             const dispatch::DispatchDecision& fallback,
                                             const aap2::DispatchRequest& request);

private:
    void run();

    std::string target_;
    std::string admin_secret_;
    std::vector<Route> routes_;
    dispatch::DispatchDecision fallback_;
    std::unique_ptr<aap2::Client> client_;
    std::thread thread_;
    std::atomic<bool> stop_{false};
    std::atomic<std::uint64_t> requests_{0};
    mutable std::mutex mutex_;
    std::vector<aap2::DispatchRequest> log_;
};

/// Passive registration that collects every delivered ADU.
class Sink {
public:
    Sink(const std::string& target, const std::string& agent, const std::string& secret);
    ~Sink();

    Sink(const Sink&) = delete;
    Sink& operator=(const Sink&) = delete;

    std::vector<aap2::BundleAdu> received() const;
    std::size_t count() const;
    bool alive() const { return !done_.load(); }
    void stop();

private:
    void run();

    std::unique_ptr<aap2::Client> client_;
    std::thread thread_;
    std::atomic<bool> stop_{false};
    std::atomic<bool> done_{false};
    mutable std::mutex mutex_;
    std::vector<aap2::BundleAdu> received_;
};

struct StepResult {
    std::size_t index = 0;
    std::string op;
    bool passed = true;
    std::string message;
};

struct NodeReport {
    std::string name;
    /// One entry per daemon lifetime (restarts add entries).
    std::vector<bpa::NodeStats> stats;
    std::vector<std::string> event_log;

    bool accounting_closed() const;
};

struct ScenarioResult {
    std::string name;
    bool passed = false;
    std::string failure;
    std::vector<StepResult> steps;
    std::vector<NodeReport> nodes;
    std::chrono::milliseconds wall_time{0};
    bool simulated_clock = false;
    DtnTimeMs simulated_ms = 0;

    /// Event logs of every node, concatenated in node order.
    std::string event_log_text() const;
};

struct RunOptions {
    /// Overrides the scenario's seed when set.
    std::optional<std::uint64_t> seed;
    /// Default bound for polling assertions.
    std::chrono::milliseconds poll_timeout{10000};
};

ScenarioResult run_scenario(const nlohmann::json& spec, const RunOptions& options = {});
/// Throws ScenarioError if the file cannot be read or parsed.
ScenarioResult run_scenario_file(const std::filesystem::path& path, const RunOptions& options = {});

/// JUnit XML, one testsuite with one testcase per scenario.
std::string to_junit(const std::vector<ScenarioResult>& results);

} // namespace bpmux::harness
