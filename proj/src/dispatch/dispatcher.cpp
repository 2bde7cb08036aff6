#include "bpmux/dispatch/dispatcher.hpp"

#include "bpmux/bp/codec.hpp"
#include "bpmux/bp/fragment.hpp"
#include "bpmux/common/log.hpp"

namespace bpmux::dispatch {

namespace {

// Room for a longer payload length head and for the bundle age block to
// grow when the TX context updates it.
constexpr std::uint64_t kHeadroom = 8 + 9;

std::string describe(const bp::Bundle& b)
{
    return b.source.to_text() + " -> " + b.destination.to_text() + " (" + std::to_string(b.creation.dtn_time_ms) +
           "," + std::to_string(b.creation.sequence_number) + ")";
}

} // namespace

BundleMeta meta_of(const bp::Bundle& bundle)
{
    return {bundle.source, bundle.destination, bundle.creation, bp::encoded_size(bundle), bundle.lifetime_ms};
}

std::optional<std::uint64_t> fragment_payload_limit(const bp::Bundle& bundle, std::size_t max_bundle_size,
                                                    std::optional<std::uint64_t> max_fragment_payload)
{
    const std::uint64_t payload = bundle.payload().size();
    bool needed = max_fragment_payload && payload > *max_fragment_payload;
    std::optional<std::uint64_t> limit = max_fragment_payload;
    if (max_bundle_size != 0) {
        // Worst-case fragment headers: every block present, fragment fields
        // at their largest values.
        bp::Bundle probe = bundle;
        probe.proc_flags |= bp::bundle_flags::kIsFragment;
        if (!bundle.is_fragment()) {
            probe.fragment_offset = payload;
            probe.total_adu_length = payload;
        } else {
            probe.fragment_offset = bundle.fragment_offset + payload;
        }
        probe.payload().clear();
        const std::uint64_t overhead = bp::encoded_size(probe) + kHeadroom;
        if (bp::encoded_size(bundle) > max_bundle_size)
            needed = true;
        const std::uint64_t room = max_bundle_size > overhead ? max_bundle_size - overhead : 0;
        limit = limit ? std::min(*limit, room) : room;
    }
    if (!needed)
        return std::nullopt;
    return limit.value_or(0);
}

Dispatcher::Dispatcher(fib::Fib& fib, const Clock& clock, DispatchPort& port, Options options)
    : fib_(fib), clock_(clock), port_(port), options_(options)
{
}

std::size_t Dispatcher::pending_bundles() const
{
    std::size_t n = 0;
    for (const auto& [id, p] : pending_)
        n += p.bundles.size();
    return n;
}

void Dispatcher::dispatch(core::BundleDescriptor desc)
{
    const auto node = desc.bundle.destination.node_id();

    if (auto cached = fib_.cache_get(node)) {
        apply(std::move(desc), *cached);
        return;
    }

    for (const auto& entry : fib_.lookup(node)) {
        if (entry.direct() && entry.connected()) {
            auto decision = DispatchDecision::forward({NextHop{entry.node_id, entry.cla_address}});
            fib_.cache_put(node, decision, clock_.now());
            apply(std::move(desc), decision);
            return;
        }
    }

    if (bdm_) {
        if (auto it = pending_by_node_.find(node); it != pending_by_node_.end()) {
            pending_.at(it->second).bundles.push_back(std::move(desc));
            return;
        }
        const std::uint64_t id = next_request_id_++;
        if (bdm_->send_request({id, meta_of(desc.bundle)})) {
            ++bdm_requests_;
            pending_by_node_[node] = id;
            Pending p{node, {}, clock_.now() + options_.bdm_timeout_ms};
            p.bundles.push_back(std::move(desc));
            pending_.emplace(id, std::move(p));
            return;
        }
        log::warn("dispatch", "dispatcher module did not accept request ", id);
    }

    fallback(std::move(desc), "no route");
}

void Dispatcher::fallback(core::BundleDescriptor desc, const char* why)
{
    if (auto storage = port_.storage_link()) {
        log::debug("dispatch", "storing ", describe(desc.bundle), ": ", why);
        apply(std::move(desc), DispatchDecision::store());
        return;
    }
    log::debug("dispatch", "drop ", describe(desc.bundle), " NoRoute: ", why);
    port_.outcome(desc, Outcome::Dropped, core::DropReason::NoRoute);
}

void Dispatcher::apply(core::BundleDescriptor desc, const DispatchDecision& decision)
{
    switch (decision.action) {
    case DispatchDecision::Action::Drop:
        log::debug("dispatch", "drop ", describe(desc.bundle), " DispatcherDrop: ", decision.reason);
        port_.outcome(desc, Outcome::Dropped, core::DropReason::DispatcherDrop);
        return;
    case DispatchDecision::Action::Store: {
        auto storage = port_.storage_link();
        if (!storage) {
            log::debug("dispatch", "drop ", describe(desc.bundle), " NoRoute: store requested, no storage");
            port_.outcome(desc, Outcome::Dropped, core::DropReason::NoRoute);
            return;
        }
        if (!port_.enqueue(*storage, {desc.bundle, desc.received_at})) {
            log::warn("dispatch", "drop ", describe(desc.bundle), " NoRoute: storage queue full");
            port_.outcome(desc, Outcome::Dropped, core::DropReason::NoRoute);
            return;
        }
        port_.outcome(desc, Outcome::Stored);
        return;
    }
    case DispatchDecision::Action::Forward:
        forward(std::move(desc), decision);
        return;
    }
}

void Dispatcher::forward(core::BundleDescriptor desc, const DispatchDecision& decision)
{
    for (const auto& hop : decision.next_hops) {
        auto entry = fib_.resolve(hop);
        if (!entry || !entry->link_id)
            continue;
        const cla::LinkId link = *entry->link_id;

        std::vector<bp::Bundle> pieces;
        const auto limit =
            fragment_payload_limit(desc.bundle, port_.link_max_bundle_size(link), decision.max_fragment_payload);
        if (limit) {
            if (desc.bundle.must_not_fragment() || desc.bundle.is_admin_record() || *limit == 0) {
                log::debug("dispatch", "drop ", describe(desc.bundle),
                          " DispatcherDrop: too large for ", entry->cla_address.to_text(), " and not fragmentable");
                port_.outcome(desc, Outcome::Dropped, core::DropReason::DispatcherDrop);
                return;
            }
            pieces = bp::fragment_bundle(desc.bundle, *limit);
        } else {
            pieces.push_back(desc.bundle);
        }

        std::size_t queued = 0;
        for (auto& piece : pieces) {
            if (!port_.enqueue(link, {std::move(piece), desc.received_at}))
                break;
            ++queued;
        }
        if (queued == 0)
            continue;
        if (queued < pieces.size())
            log::warn("dispatch", "link queue overflow: ", pieces.size() - queued, " of ", pieces.size(),
                      " fragments of ", describe(desc.bundle), " lost");
        port_.outcome(desc, Outcome::Forwarded);
        return;
    }

    if (!desc.redispatched) {
        log::info("dispatch", "no usable next hop for ", describe(desc.bundle), ", dispatching again");
        desc.redispatched = true;
        dispatch(std::move(desc));
        return;
    }
    fallback(std::move(desc), "no usable next hop");
}

void Dispatcher::set_bdm(BdmChannel* bdm)
{
    bdm_ = bdm;
    if (bdm_)
        return;
    while (!pending_.empty())
        fail_pending(pending_.begin(), "dispatcher module detached");
}

void Dispatcher::on_response(std::uint64_t request_id, const DispatchDecision& decision)
{
    auto it = pending_.find(request_id);
    if (it == pending_.end()) {
        log::debug("dispatch", "ignoring response to unknown request ", request_id);
        return;
    }
    Pending p = std::move(it->second);
    pending_.erase(it);
    pending_by_node_.erase(p.destination_node);

    if (!decision.valid()) {
        log::warn("dispatch", "invalid decision for request ", request_id);
        for (auto& desc : p.bundles)
            fallback(std::move(desc), "invalid decision");
        return;
    }
    fib_.cache_put(p.destination_node, decision, clock_.now());
    for (auto& desc : p.bundles)
        apply(std::move(desc), decision);
}

void Dispatcher::fail_pending(std::map<std::uint64_t, Pending>::iterator it, const char* why)
{
    Pending p = std::move(it->second);
    pending_by_node_.erase(p.destination_node);
    pending_.erase(it);
    for (auto& desc : p.bundles)
        fallback(std::move(desc), why);
}

void Dispatcher::tick()
{
    const DtnTimeMs now = clock_.now();
    for (auto it = pending_.begin(); it != pending_.end();) {
        if (it->second.deadline <= now) {
            ++bdm_timeouts_;
            log::warn("dispatch", "BdmTimeout for request ", it->first);
            auto next = std::next(it);
            fail_pending(it, "BdmTimeout");
            it = next;
        } else {
            ++it;
        }
    }
}

} // namespace bpmux::dispatch
