#pragma once

// The synchronous forwarding decision point. Resolution order: decision
// cache, DIRECT+CONNECTED FIB entry, attached dispatcher module (BDM),
// storage, drop. Runs on the processing loop; a bundle waiting for the BDM
// sits in the pending table while other bundles keep flowing.

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "bpmux/core/descriptor.hpp"
#include "bpmux/dispatch/decision.hpp"
#include "bpmux/fib/fib.hpp"

namespace bpmux::dispatch {

enum class Outcome { Forwarded, Stored, Dropped };

/// What the dispatcher needs from the bundle processor.
class DispatchPort {
public:
    virtual ~DispatchPort() = default;

    /// Non-blocking enqueue to a link's TX queue.
    virtual bool enqueue(cla::LinkId link, cla::OutboundBundle item) = 0;
    /// 0 means unlimited.
    virtual std::size_t link_max_bundle_size(cla::LinkId link) const = 0;
    virtual std::optional<cla::LinkId> storage_link() const = 0;
    /// Exactly once per dispatched descriptor.
    virtual void outcome(const core::BundleDescriptor& desc, Outcome outcome,
                         std::optional<core::DropReason> reason = std::nullopt) = 0;
};

/// Connection to the external dispatcher module.
class BdmChannel {
public:
    virtual ~BdmChannel() = default;
    /// False if the request could not be queued.
    virtual bool send_request(const DispatchRequest& request) = 0;
};

BundleMeta meta_of(const bp::Bundle& bundle);

class Dispatcher {
public:
    struct Options {
        DtnTimeMs bdm_timeout_ms = 2000;
    };

    Dispatcher(fib::Fib& fib, const Clock& clock, DispatchPort& port, Options options);

    void dispatch(core::BundleDescriptor desc);
    void apply(core::BundleDescriptor desc, const DispatchDecision& decision);

    /// nullptr detaches; bundles awaiting the old BDM fall back immediately.
    void set_bdm(BdmChannel* bdm);
    bool bdm_attached() const { return bdm_ != nullptr; }

    /// Unknown or late request ids are ignored.
    void on_response(std::uint64_t request_id, const DispatchDecision& decision);
    /// Resolves requests past their deadline.
    void tick();

    std::uint64_t bdm_requests() const { return bdm_requests_; }
    std::uint64_t bdm_timeouts() const { return bdm_timeouts_; }
    std::size_t pending_bundles() const;

private:
    struct Pending {
        bp::EndpointId destination_node;
        std::vector<core::BundleDescriptor> bundles;
        DtnTimeMs deadline;
    };

    void fallback(core::BundleDescriptor desc, const char* why);
    void forward(core::BundleDescriptor desc, const DispatchDecision& decision);
    void fail_pending(std::map<std::uint64_t, Pending>::iterator it, const char* why);

    fib::Fib& fib_;
    const Clock& clock_;
    DispatchPort& port_;
    Options options_;
    BdmChannel* bdm_ = nullptr;
    std::uint64_t next_request_id_ = 1;
    std::map<std::uint64_t, Pending> pending_;
    std::map<bp::EndpointId, std::uint64_t> pending_by_node_;
    std::uint64_t bdm_requests_ = 0;
    std::uint64_t bdm_timeouts_ = 0;
};

/// Payload size per fragment so that every fragment of `bundle` serializes
/// within `max_bundle_size` (0 = unlimited), additionally capped by
/// `max_fragment_payload`. nullopt if no fragmentation is needed, 0 if the
/// limit cannot be met.
std::optional<std::uint64_t> fragment_payload_limit(const bp::Bundle& bundle, std::size_t max_bundle_size,
                                                    std::optional<std::uint64_t> max_fragment_payload);

} // namespace bpmux::dispatch
