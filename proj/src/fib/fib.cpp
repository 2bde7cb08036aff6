#include "bpmux/fib/fib.hpp"

#include <algorithm>

namespace bpmux::fib {

void fold(std::map<std::pair<bp::EndpointId, cla::ClaAddress>, FibEntry>& state, const FibEvent& event)
{
    auto key = std::make_pair(event.entry.node_id, event.entry.cla_address);
    if (event.kind == FibEvent::Kind::Upserted)
        state[key] = event.entry;
    else
        state.erase(key);
}

void Fib::emit(FibEvent::Kind kind, const FibEntry& entry)
{
    if (listener_)
        listener_(FibEvent{kind, entry});
}

void Fib::upsert(const bp::EndpointId& node_id, const cla::ClaAddress& address, std::uint8_t flags)
{
    FibEntry next{node_id.node_id(), address, static_cast<std::uint8_t>(flags & flags::kDirect), std::nullopt};
    if (auto it = active_links_.find(address); it != active_links_.end()) {
        next.flags |= flags::kConnected;
        next.link_id = it->second;
    }
    Key key{next.node_id, address};
    auto it = entries_.find(key);
    if (it != entries_.end() && it->second == next)
        return;
    entries_[key] = next;
    invalidate_cache_for_node(next.node_id);
    emit(FibEvent::Kind::Upserted, next);
}

void Fib::remove(const bp::EndpointId& node_id, const cla::ClaAddress& address)
{
    auto it = entries_.find(Key{node_id.node_id(), address});
    if (it == entries_.end())
        return;
    FibEntry gone = it->second;
    entries_.erase(it);
    invalidate_cache_for_node(gone.node_id);
    emit(FibEvent::Kind::Removed, gone);
}

std::vector<FibEntry> Fib::lookup(const bp::EndpointId& node_id) const
{
    std::vector<FibEntry> out;
    auto node = node_id.node_id();
    for (const auto& [key, entry] : entries_)
        if (key.first == node)
            out.push_back(entry);
    std::stable_partition(out.begin(), out.end(), [](const FibEntry& e) { return e.connected(); });
    return out;
}

std::vector<FibEntry> Fib::entries() const
{
    std::vector<FibEntry> out;
    out.reserve(entries_.size());
    for (const auto& [key, entry] : entries_)
        out.push_back(entry);
    return out;
}

bool Fib::has_entries_for(const cla::ClaAddress& address) const
{
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const auto& kv) { return kv.first.second == address; });
}

void Fib::link_up(const cla::ClaAddress& address, cla::LinkId link_id)
{
    active_links_[address] = link_id;
    for (auto& [key, entry] : entries_) {
        if (key.second != address)
            continue;
        FibEntry next = entry;
        next.flags |= flags::kConnected;
        next.link_id = link_id;
        if (next == entry)
            continue;
        entry = next;
        invalidate_cache_for_node(entry.node_id);
        emit(FibEvent::Kind::Upserted, entry);
    }
}

void Fib::link_down(const cla::ClaAddress& address)
{
    active_links_.erase(address);
    invalidate_cache_for_address(address);
    for (auto& [key, entry] : entries_) {
        if (key.second != address || !entry.connected())
            continue;
        entry.flags &= static_cast<std::uint8_t>(~flags::kConnected);
        entry.link_id.reset();
        invalidate_cache_for_node(entry.node_id);
        emit(FibEvent::Kind::Upserted, entry);
    }
}

bool Fib::is_connected(const cla::ClaAddress& address) const
{
    return active_links_.count(address) != 0;
}

std::optional<cla::LinkId> Fib::link_for(const cla::ClaAddress& address) const
{
    if (auto it = active_links_.find(address); it != active_links_.end())
        return it->second;
    return std::nullopt;
}

std::optional<FibEntry> Fib::resolve(const dispatch::NextHop& hop) const
{
    if (!hop.cla_address.cla_name.empty()) {
        auto link = link_for(hop.cla_address);
        if (!link)
            return std::nullopt;
        if (auto it = entries_.find(Key{hop.node_id.node_id(), hop.cla_address}); it != entries_.end())
            return it->second;
        // Hops may name an address the FIB has no entry for (e.g. storage).
        return FibEntry{hop.node_id, hop.cla_address, flags::kConnected, link};
    }
    for (const auto& entry : lookup(hop.node_id))
        if (entry.connected())
            return entry;
    return std::nullopt;
}

void Fib::set_cache_enabled(bool enabled)
{
    cache_enabled_ = enabled;
    if (!enabled)
        cache_.clear();
}

bool Fib::decision_is_live(const dispatch::DispatchDecision& decision) const
{
    if (decision.action != dispatch::DispatchDecision::Action::Forward || decision.next_hops.empty())
        return false;
    return std::all_of(decision.next_hops.begin(), decision.next_hops.end(),
                       [&](const dispatch::NextHop& hop) { return resolve(hop).has_value(); });
}

bool Fib::cache_put(const bp::EndpointId& destination, const dispatch::DispatchDecision& decision, DtnTimeMs now)
{
    if (!cache_enabled_ || !decision_is_live(decision))
        return false;
    auto node = destination.node_id();
    cache_[node] = DispatchCacheEntry{node, decision, now};
    return true;
}

std::optional<dispatch::DispatchDecision> Fib::cache_get(const bp::EndpointId& destination)
{
    if (!cache_enabled_)
        return std::nullopt;
    auto it = cache_.find(destination.node_id());
    if (it == cache_.end())
        return std::nullopt;
    if (!decision_is_live(it->second.decision)) {
        cache_.erase(it);
        return std::nullopt;
    }
    return it->second.decision;
}

void Fib::invalidate_cache_for_node(const bp::EndpointId& node)
{
    cache_.erase(node);
    // Decisions for other destinations may route through this node.
    for (auto it = cache_.begin(); it != cache_.end();) {
        const auto& hops = it->second.decision.next_hops;
        bool via = std::any_of(hops.begin(), hops.end(),
                               [&](const dispatch::NextHop& h) { return h.node_id.node_id() == node; });
        it = via ? cache_.erase(it) : std::next(it);
    }
}

void Fib::invalidate_cache_for_address(const cla::ClaAddress& address)
{
    for (auto it = cache_.begin(); it != cache_.end();) {
        bool refs = false;
        for (const auto& hop : it->second.decision.next_hops) {
            if (hop.cla_address == address) {
                refs = true;
                break;
            }
            if (hop.cla_address.cla_name.empty()) {
                auto e = entries_.find(Key{hop.node_id.node_id(), address});
                if (e != entries_.end()) {
                    refs = true;
                    break;
                }
            }
        }
        it = refs ? cache_.erase(it) : std::next(it);
    }
}

} // namespace bpmux::fib
