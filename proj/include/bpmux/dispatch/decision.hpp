#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bpmux/bp/bundle.hpp"
#include "bpmux/bp/eid.hpp"
#include "bpmux/cla/cla.hpp"

namespace bpmux::dispatch {

struct NextHop {
    bp::EndpointId node_id;
    /// Empty cla_name means "any CONNECTED FIB entry of node_id".
    cla::ClaAddress cla_address;

    friend bool operator==(const NextHop&, const NextHop&) = default;
};

/// Outcome of a forwarding decision, from the FIB or from a dispatcher module.
struct DispatchDecision {
    enum class Action : std::uint8_t { Forward = 0, Store = 1, Drop = 2 };

    Action action = Action::Drop;
    /// Priority order; only the first usable hop carries the bundle.
    std::vector<NextHop> next_hops;
    std::optional<std::uint64_t> max_fragment_payload;
    std::string reason;

    static DispatchDecision forward(std::vector<NextHop> hops, std::optional<std::uint64_t> max_fragment = std::nullopt)
    {
        return {Action::Forward, std::move(hops), max_fragment, {}};
    }
    static DispatchDecision store() { return {Action::Store, {}, std::nullopt, {}}; }
    static DispatchDecision drop(std::string why) { return {Action::Drop, {}, std::nullopt, std::move(why)}; }

    bool valid() const
    {
        if (action == Action::Forward && next_hops.empty())
            return false;
        if (max_fragment_payload && *max_fragment_payload < 1)
            return false;
        return true;
    }

    friend bool operator==(const DispatchDecision&, const DispatchDecision&) = default;
};

/// Header metadata shipped to a dispatcher module; never the payload.
struct BundleMeta {
    bp::EndpointId source;
    bp::EndpointId destination;
    bp::CreationTimestamp creation;
    std::uint64_t size = 0;
    std::uint64_t lifetime_ms = 0;

    friend bool operator==(const BundleMeta&, const BundleMeta&) = default;
};

struct DispatchRequest {
    std::uint64_t request_id = 0;
    BundleMeta meta;

    friend bool operator==(const DispatchRequest&, const DispatchRequest&) = default;
};

inline const char* to_string(DispatchDecision::Action action)
{
    switch (action) {
    case DispatchDecision::Action::Forward: return "FORWARD";
    case DispatchDecision::Action::Store: return "STORE";
    case DispatchDecision::Action::Drop: return "DROP";
    }
    return "?";
}

} // namespace bpmux::dispatch
