#pragma once

// ClaHost double that records everything the CLA side reports.

#include <chrono>
#include <condition_variable>
#include <map>
#include <mutex>
#include <thread>
#include <vector>

#include "bpmux/cla/cla.hpp"
#include "bpmux/common/clock.hpp"

namespace bpmux::test {

class RecordingHost final : public cla::ClaHost {
public:
    struct Received {
        cla::ClaAddress via;
        cla::Bytes data;
        cla::Arrival arrival;
        DtnTimeMs at;
    };
    struct Inbound {
        std::string cla_name;
        std::string detail;
        std::unique_ptr<cla::LinkTransport> transport;
    };
    struct Failed {
        cla::LinkId link;
        cla::OutboundBundle item;
        std::string reason;
    };

    explicit RecordingHost(const Clock& clock, bp::EndpointId node = bp::EndpointId::dtn("test.dtn", ""))
        : clock_(clock), node_(std::move(node))
    {
    }

    void bundle_received(const cla::ClaAddress& via, cla::Bytes data, cla::Arrival arrival) override
    {
        std::lock_guard lock(mutex_);
        received.push_back({via, std::move(data), arrival, clock_.now()});
        cv_.notify_all();
    }
    void inbound_link(const std::string& cla_name, std::string detail,
                      std::unique_ptr<cla::LinkTransport> transport) override
    {
        std::lock_guard lock(mutex_);
        inbound.push_back({cla_name, std::move(detail), std::move(transport)});
        cv_.notify_all();
    }
    void link_lost(cla::LinkId id) override
    {
        std::lock_guard lock(mutex_);
        lost.push_back(id);
        cv_.notify_all();
    }
    void transmission_failed(cla::LinkId id, cla::OutboundBundle item, std::string reason) override
    {
        std::lock_guard lock(mutex_);
        failed.push_back({id, std::move(item), std::move(reason)});
        cv_.notify_all();
    }
    const Clock& clock() const override { return clock_; }
    bp::EndpointId local_node_id() const override { return node_; }
    void register_service_endpoint(const std::string& demux, ServiceHandler handler) override
    {
        services[demux] = std::move(handler);
    }

    /// Waits (real time) until `pred` holds under the lock.
    template <typename Pred>
    bool wait_for(Pred pred, std::chrono::milliseconds timeout = std::chrono::milliseconds(5000))
    {
        std::unique_lock lock(mutex_);
        return cv_.wait_for(lock, timeout, [&] { return pred(*this); });
    }

    std::size_t received_count()
    {
        std::lock_guard lock(mutex_);
        return received.size();
    }

    std::vector<Received> received;
    std::vector<Inbound> inbound;
    std::vector<cla::LinkId> lost;
    std::vector<Failed> failed;
    std::map<std::string, ServiceHandler> services;

private:
    const Clock& clock_;
    bp::EndpointId node_;
    std::mutex mutex_;
    std::condition_variable cv_;
};

} // namespace bpmux::test
