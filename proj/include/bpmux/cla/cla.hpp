#pragma once

// Generic convergence-layer machinery. A concrete CLA implements `Cla`
// (management functions) and hands out one `LinkTransport` per link
// (reception and transmission functions). The generic `Link` runs one RX and
// one TX context per link and talks to the bundle processor through `ClaHost`.

#include <atomic>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "bpmux/bp/bundle.hpp"
#include "bpmux/common/clock.hpp"
#include "bpmux/common/queue.hpp"

namespace bpmux::cla {

using Bytes = std::vector<std::uint8_t>;
using LinkId = std::uint64_t;

class ClaError : public std::runtime_error {
public:
    enum class Kind { DuplicateClaName, UnknownCla, InvalidAddress, ConnectionFailed, MalformedFrame, FrameTooLarge };

    ClaError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

const char* to_string(ClaError::Kind kind);

/// "<cla_name>:<detail>", split at the first ':'.
struct ClaAddress {
    std::string cla_name;
    std::string detail;

    static ClaAddress parse(std::string_view text);
    std::string to_text() const { return cla_name + ":" + detail; }

    friend bool operator==(const ClaAddress&, const ClaAddress&) = default;
    friend auto operator<=>(const ClaAddress&, const ClaAddress&) = default;
};

enum class LinkState { Connecting, Active, Closing, Down };

const char* to_string(LinkState state);

/// A bundle waiting in a link's TX queue.
struct OutboundBundle {
    bp::Bundle bundle;
    DtnTimeMs received_at = 0;
};

/// What the TX context hands to the CLA-specific transmission function.
struct Transmission {
    std::span<const std::uint8_t> serialized;
    const bp::Bundle& bundle;
    DtnTimeMs received_at;
};

struct SendResult {
    enum class Status { Ok, LinkBroken, Rejected };
    Status status = Status::Ok;
    std::string reason;

    static SendResult ok() { return {}; }
    static SendResult broken(std::string why) { return {Status::LinkBroken, std::move(why)}; }
    static SendResult rejected(std::string why) { return {Status::Rejected, std::move(why)}; }
};

/// How a received bundle got here. Bundles coming back out of a local CLA
/// (recalled from storage, produced by encapsulation) did not cross a hop.
enum class Arrival { FromPeer, FromLocalCla };

/// CLA-specific half of a link.
class LinkTransport {
public:
    virtual ~LinkTransport() = default;

    /// Transmission function: encapsulate and send one serialized bundle.
    virtual SendResult send(const Transmission& tx) = 0;

    /// Reception function: blocks for the next serialized bundle; nullopt
    /// once the link is closed or the peer went away.
    virtual std::optional<Bytes> receive() = 0;

    /// Unblocks receive() and any pending send().
    virtual void shutdown() = 0;

    virtual Arrival arrival() const { return Arrival::FromPeer; }
};

/// The bundle processor side, as seen from the CLA subsystem. Implementations
/// must only enqueue work; they are called from RX/TX/accept contexts.
class ClaHost {
public:
    /// Runs on the processing loop; must not block.
    using ServiceHandler = std::function<void(bp::Bundle bundle)>;

    virtual ~ClaHost() = default;

    virtual void bundle_received(const ClaAddress& via, Bytes data, Arrival arrival = Arrival::FromPeer) = 0;
    /// Hands over several bundles that must be processed back to back, with
    /// no other work in between. False if the host is no longer accepting.
    virtual bool bundles_received(const ClaAddress& via, std::vector<Bytes> batch, Arrival arrival)
    {
        for (auto& data : batch)
            bundle_received(via, std::move(data), arrival);
        return true;
    }
    virtual void inbound_link(const std::string& cla_name, std::string detail,
                              std::unique_ptr<LinkTransport> transport) = 0;
    virtual void link_lost(LinkId id) = 0;
    virtual void transmission_failed(LinkId id, OutboundBundle item, std::string reason) = 0;
    virtual const Clock& clock() const = 0;

    virtual bp::EndpointId local_node_id() const = 0;
    /// Claims a demux on the local node; bundles delivered to it go to
    /// `handler` instead of an application registration. Only valid during start().
    virtual void register_service_endpoint(const std::string& demux, ServiceHandler handler) = 0;
};

/// Management functions every CLA implements.
class Cla {
public:
    virtual ~Cla() = default;

    virtual std::string name() const = 0;
    /// Largest serialized bundle the CLA accepts; 0 means no limit.
    /// Constant over the lifetime of the instance.
    virtual std::size_t max_bundle_size() const = 0;

    virtual void start(ClaHost& host) = 0;
    virtual void stop() = 0;

    /// Establishes a link towards `detail`. May block; never called from the
    /// processing loop. Throws ClaError(ConnectionFailed).
    virtual std::unique_ptr<LinkTransport> open(const std::string& detail) = 0;
};

class ClaRegistry {
public:
    /// Throws ClaError(DuplicateClaName).
    void register_cla(const std::string& name, std::shared_ptr<Cla> instance);

    /// Throws ClaError(UnknownCla).
    std::shared_ptr<Cla> resolve(const std::string& name) const;
    std::shared_ptr<Cla> find(const std::string& name) const;

    /// Parses and checks that the CLA exists.
    /// Throws ClaError(InvalidAddress | UnknownCla).
    ClaAddress parse_for_use(std::string_view text) const;

    std::vector<std::shared_ptr<Cla>> all() const;

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Cla>> clas_;
};

/// Generic half of a link: owns the TX queue and the RX/TX contexts.
class Link {
public:
    static constexpr std::size_t kDefaultQueueCapacity = 256;

    Link(LinkId id, ClaAddress address, std::unique_ptr<LinkTransport> transport, ClaHost& host,
         std::size_t max_bundle_size, std::size_t queue_capacity = kDefaultQueueCapacity);
    ~Link();

    Link(const Link&) = delete;
    Link& operator=(const Link&) = delete;

    void start();

    /// Non-blocking. False unless ACTIVE and the queue has room.
    bool enqueue(OutboundBundle item);

    /// Stops both contexts and returns every bundle that was not sent.
    std::vector<OutboundBundle> close();

    LinkId id() const { return id_; }
    const ClaAddress& address() const { return address_; }
    LinkState state() const { return state_.load(); }
    std::size_t max_bundle_size() const { return max_bundle_size_; }
    std::size_t queued() const { return tx_queue_.size(); }
    std::uint64_t sent_count() const { return sent_.load(); }

private:
    void rx_loop();
    void tx_loop();

    const LinkId id_;
    const ClaAddress address_;
    std::unique_ptr<LinkTransport> transport_;
    ClaHost& host_;
    const std::size_t max_bundle_size_;
    MessageQueue<OutboundBundle> tx_queue_;
    std::atomic<LinkState> state_{LinkState::Connecting};
    std::atomic<std::uint64_t> sent_{0};
    std::mutex unsent_mutex_;
    std::vector<OutboundBundle> unsent_;
    std::thread rx_thread_;
    std::thread tx_thread_;
};

} // namespace bpmux::cla
