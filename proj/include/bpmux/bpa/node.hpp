#pragma once

// The bundle processor. One processing loop owns every shared map (links,
// FIB, registrations, reassembly state); CLA contexts and protocol
// sessions talk to it only by posting work onto its queue.

#include <array>
#include <atomic>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "bpmux/aap2/server.hpp"
#include "bpmux/bibe/bibe.hpp"
#include "bpmux/bpa/config.hpp"
#include "bpmux/cla/loopback.hpp"
#include "bpmux/cla/mtcp.hpp"
#include "bpmux/core/descriptor.hpp"
#include "bpmux/dispatch/dispatcher.hpp"
#include "bpmux/fib/fib.hpp"
#include "bpmux/storage/storage_cla.hpp"

namespace bpmux::bpa {

struct NodeStats {
    /// Ingests from CLAs, agents and storage.
    std::uint64_t received = 0;
    /// Bundles that went back into dispatch after a link or CLA failure.
    std::uint64_t redispatched = 0;
    /// Whole bundles rebuilt from locally delivered fragments.
    std::uint64_t reassembled = 0;

    std::uint64_t delivered = 0;
    std::uint64_t forwarded = 0;
    std::uint64_t stored = 0;
    std::array<std::uint64_t, core::kDropReasonCount> dropped{};

    /// Wire data that never became a bundle.
    std::uint64_t unsupported_version = 0;
    std::uint64_t malformed = 0;

    std::uint64_t bdm_requests = 0;
    std::uint64_t bdm_timeouts = 0;
    std::size_t awaiting_dispatch = 0;
    std::size_t links = 0;

    std::uint64_t bundles_in() const { return received + redispatched + reassembled; }
    std::uint64_t dropped_total() const;
    std::uint64_t outcomes() const { return delivered + forwarded + stored + dropped_total(); }
    std::uint64_t drops(core::DropReason r) const { return dropped[static_cast<std::size_t>(r)]; }
};

struct LinkInfo {
    cla::LinkId id;
    cla::ClaAddress address;
    cla::LinkState state;
    std::size_t queued;
    std::uint64_t sent;
};

class Node final : public cla::ClaHost,
                   public dispatch::DispatchPort,
                   public dispatch::BdmChannel,
                   public aap2::Backend {
public:
    /// `clock` defaults to the real clock and must outlive the node.
    explicit Node(NodeConfig config, const Clock* clock = nullptr,
                  std::shared_ptr<cla::LoopbackHub> hub = cla::LoopbackHub::global());
    ~Node() override;

    Node(const Node&) = delete;
    Node& operator=(const Node&) = delete;

    /// Throws on bind failures and storage errors.
    void start();
    void stop();

    const NodeConfig& config() const { return config_; }
    std::uint16_t aap2_port() const;
    std::uint16_t mtcp_port() const;
    std::string aap2_target() const;

    // In-process observation; each is a round trip through the loop.
    NodeStats stats();
    std::vector<fib::FibEntry> fib_entries();
    std::vector<fib::FibEvent> fib_events();
    std::vector<LinkInfo> links();
    std::vector<std::string> event_log();
    std::size_t dispatch_cache_size();
    storage::StorageCla* storage() { return storage_.get(); }

    // cla::ClaHost
    void bundle_received(const cla::ClaAddress& via, cla::Bytes data, cla::Arrival arrival) override;
    bool bundles_received(const cla::ClaAddress& via, std::vector<cla::Bytes> batch, cla::Arrival arrival) override;
    void inbound_link(const std::string& cla_name, std::string detail,
                      std::unique_ptr<cla::LinkTransport> transport) override;
    void link_lost(cla::LinkId id) override;
    void transmission_failed(cla::LinkId id, cla::OutboundBundle item, std::string reason) override;
    const Clock& clock() const override { return *clock_; }
    bp::EndpointId local_node_id() const override { return config_.node_id; }
    void register_service_endpoint(const std::string& demux, ServiceHandler handler) override;

    // dispatch::DispatchPort
    bool enqueue(cla::LinkId link, cla::OutboundBundle item) override;
    std::size_t link_max_bundle_size(cla::LinkId link) const override;
    std::optional<cla::LinkId> storage_link() const override { return storage_link_; }
    void outcome(const core::BundleDescriptor& desc, dispatch::Outcome outcome,
                 std::optional<core::DropReason> reason) override;

    // dispatch::BdmChannel
    bool send_request(const dispatch::DispatchRequest& request) override;

    // aap2::Backend
    aap2::ConfigResult configure(const std::shared_ptr<aap2::Session>& session,
                                 const aap2::ConnectionConfig& config) override;
    void activated(const std::shared_ptr<aap2::Session>& session) override;
    aap2::Response send_adu(aap2::Session& session, const aap2::BundleAdu& adu) override;
    aap2::Response link_request(aap2::Session& session, const aap2::Link& link) override;
    void dispatch_response(aap2::Session& session, const aap2::DispatchResponse& response) override;
    void closed(aap2::Session& session) override;

private:
    struct Holder {
        aap2::SessionId id;
        std::weak_ptr<aap2::Session> session;
    };
    struct Registration {
        aap2::Bytes secret;
        std::optional<Holder> active;
        std::optional<Holder> passive;
        /// Set once the passive session is ready for deliveries.
        bool sink_ready = false;
    };

    bool post(std::function<void()> fn);
    template <typename Fn>
    auto call(Fn fn) -> decltype(fn());

    void loop();
    void on_wire(const cla::ClaAddress& via, cla::Bytes data, cla::Arrival arrival);
    void ingest(core::BundleDescriptor desc, cla::Arrival arrival);
    void deliver_local(core::BundleDescriptor desc);
    void deliver_whole(core::BundleDescriptor desc);
    void redispatch(cla::OutboundBundle item);
    cla::LinkId install_link(const cla::ClaAddress& address, std::unique_ptr<cla::LinkTransport> transport);
    void close_link(cla::LinkId id);
    void on_fib_event(const fib::FibEvent& event);
    void notify_link_controllers(const aap2::Message& m);
    bool holder_alive(const std::optional<Holder>& holder) const;
    void record(const std::string& event);
    std::string describe(const bp::Bundle& b) const;

    NodeConfig config_;
    RealClock real_clock_;
    const Clock* clock_;
    std::shared_ptr<cla::LoopbackHub> hub_;

    cla::ClaRegistry registry_;
    std::shared_ptr<cla::MtcpCla> mtcp_;
    std::shared_ptr<storage::StorageCla> storage_;
    std::shared_ptr<bibe::BibeCla> bibe_;
    std::vector<std::shared_ptr<cla::Cla>> clas_;

    MessageQueue<std::function<void()>> tasks_;
    std::thread loop_thread_;
    std::atomic<bool> running_{false};
    std::unique_ptr<aap2::Server> server_;

    // Loop-owned state.
    fib::Fib fib_;
    dispatch::Dispatcher dispatcher_;
    std::map<std::string, ServiceHandler> services_;
    std::map<cla::LinkId, std::unique_ptr<cla::Link>> links_;
    std::map<cla::ClaAddress, cla::LinkId> link_by_address_;
    std::optional<cla::LinkId> storage_link_;
    cla::LinkId next_link_id_ = 1;
    std::map<std::string, Registration> registrations_;
    std::optional<Holder> dispatch_holder_;
    std::map<aap2::SessionId, std::weak_ptr<aap2::Session>> link_controllers_;
    std::map<std::string, std::vector<bp::Bundle>> reassembly_;
    std::uint64_t next_sequence_ = 0;
    DtnTimeMs last_creation_ = 0;
    NodeStats stats_;
    std::vector<fib::FibEvent> fib_events_;
    std::vector<std::string> events_;
};

} // namespace bpmux::bpa
