#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "bpmux/bp/eid.hpp"
#include "bpmux/cla/cla.hpp"
#include "bpmux/common/clock.hpp"
#include "bpmux/dispatch/decision.hpp"

namespace bpmux::fib {

namespace flags {
/// Static forwarding rule: bundles for the node skip the dispatcher module.
inline constexpr std::uint8_t kDirect = 0x01;
/// A link to the entry's CLA address is currently ACTIVE.
inline constexpr std::uint8_t kConnected = 0x02;
} // namespace flags

struct FibEntry {
    bp::EndpointId node_id;
    cla::ClaAddress cla_address;
    std::uint8_t flags = 0;
    std::optional<cla::LinkId> link_id;

    bool direct() const { return (flags & flags::kDirect) != 0; }
    bool connected() const { return (flags & flags::kConnected) != 0; }

    friend bool operator==(const FibEntry&, const FibEntry&) = default;
};

struct FibEvent {
    enum class Kind { Upserted, Removed };
    Kind kind;
    FibEntry entry;
};

/// Applies one event to a plain map; the FIB must always equal the fold of
/// everything it emitted.
void fold(std::map<std::pair<bp::EndpointId, cla::ClaAddress>, FibEntry>& state, const FibEvent& event);

struct DispatchCacheEntry {
    bp::EndpointId destination_node;
    dispatch::DispatchDecision decision;
    DtnTimeMs inserted_at = 0;
};

/// Reachable nodes, the CLA addresses to reach them and link state, plus the
/// per-destination-node cache of forwarding decisions. Owned by the
/// processing loop; not internally synchronized.
class Fib {
public:
    using Listener = std::function<void(const FibEvent&)>;

    void set_listener(Listener listener) { listener_ = std::move(listener); }

    /// Inserts or updates the entry. `flags` sets DIRECT; CONNECTED is derived
    /// from link state. Emits an event only if something changed.
    void upsert(const bp::EndpointId& node_id, const cla::ClaAddress& address, std::uint8_t flags);
    /// No-op (and no event) for an absent entry.
    void remove(const bp::EndpointId& node_id, const cla::ClaAddress& address);

    /// Entries for the node, CONNECTED ones first.
    std::vector<FibEntry> lookup(const bp::EndpointId& node_id) const;
    std::vector<FibEntry> entries() const;
    bool has_entries_for(const cla::ClaAddress& address) const;

    void link_up(const cla::ClaAddress& address, cla::LinkId link_id);
    void link_down(const cla::ClaAddress& address);
    bool is_connected(const cla::ClaAddress& address) const;
    std::optional<cla::LinkId> link_for(const cla::ClaAddress& address) const;

    /// A CONNECTED entry that satisfies the hop, if any.
    std::optional<FibEntry> resolve(const dispatch::NextHop& hop) const;

    void set_cache_enabled(bool enabled);
    bool cache_enabled() const { return cache_enabled_; }
    /// Caches FORWARD decisions whose hops are all CONNECTED. Returns whether
    /// the decision was cached.
    bool cache_put(const bp::EndpointId& destination, const dispatch::DispatchDecision& decision, DtnTimeMs now);
    std::optional<dispatch::DispatchDecision> cache_get(const bp::EndpointId& destination);
    std::size_t cache_size() const { return cache_.size(); }

private:
    using Key = std::pair<bp::EndpointId, cla::ClaAddress>;

    void emit(FibEvent::Kind kind, const FibEntry& entry);
    bool decision_is_live(const dispatch::DispatchDecision& decision) const;
    void invalidate_cache_for_node(const bp::EndpointId& node);
    void invalidate_cache_for_address(const cla::ClaAddress& address);

    std::map<Key, FibEntry> entries_;
    std::map<cla::ClaAddress, cla::LinkId> active_links_;
    std::map<bp::EndpointId, DispatchCacheEntry> cache_;
    bool cache_enabled_ = true;
    Listener listener_;
};

} // namespace bpmux::fib
