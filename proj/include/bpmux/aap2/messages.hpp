#pragma once

// AAP2 wire format: every message is a 4-octet big-endian length N followed
// by N octets of CBOR, the array [tag, body]. The body is a map with
// unsigned keys; unknown keys are skipped. EIDs and CLA addresses travel as
// text. See docs/aap2-cbor.md for the per-message key tables.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "bpmux/bp/bundle.hpp"
#include "bpmux/dispatch/decision.hpp"

namespace bpmux::aap2 {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::size_t kDefaultMaxFrame = 17 * 1024 * 1024;
inline constexpr std::size_t kMaxAduSize = 16 * 1024 * 1024;

class Aap2Error : public std::runtime_error {
public:
    enum class Kind { FrameTooLarge, MalformedMessage, ProtocolError, ConnectionClosed, Timeout };

    Aap2Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

enum class Tag : std::uint8_t {
    Welcome = 0,
    ConnectionConfig = 1,
    BundleAdu = 2,
    DispatchRequest = 3,
    DispatchResponse = 4,
    Link = 5,
    Keepalive = 6,
    Response = 7,
};

namespace auth {
inline constexpr std::uint8_t kLinkControl = 0x01;
inline constexpr std::uint8_t kDispatch = 0x02;
} // namespace auth

struct Welcome {
    bp::EndpointId node_id;
    friend bool operator==(const Welcome&, const Welcome&) = default;
};

struct ConnectionConfig {
    /// true: the client issues calls. false: the daemon does (the client receives).
    bool is_active_client = true;
    std::string agent_id;
    Bytes shared_secret;
    std::uint8_t auth = 0;
    Bytes admin_secret;
    friend bool operator==(const ConnectionConfig&, const ConnectionConfig&) = default;
};

struct BundleAdu {
    bp::EndpointId src;
    bp::EndpointId dst;
    bp::CreationTimestamp creation;
    Bytes payload;
    bool is_bibe = false;
    std::optional<std::uint64_t> lifetime_ms;
    friend bool operator==(const BundleAdu&, const BundleAdu&) = default;
};

using DispatchRequest = dispatch::DispatchRequest;

struct DispatchResponse {
    std::uint64_t request_id = 0;
    dispatch::DispatchDecision decision;
    friend bool operator==(const DispatchResponse&, const DispatchResponse&) = default;
};

struct Link {
    enum class Op : std::uint8_t { Up = 0, Down = 1, NotifyUp = 2, NotifyDown = 3 };
    Op op = Op::Up;
    bp::EndpointId node_id;
    std::string cla_address;
    bool direct = false;
    bool connected = false;
    friend bool operator==(const Link&, const Link&) = default;
};

struct Keepalive {
    friend bool operator==(const Keepalive&, const Keepalive&) = default;
};

struct Response {
    enum class Status : std::uint8_t { Ok = 0, Error = 1, Unauthorized = 2, Occupied = 3, Timeout = 4 };
    Status status = Status::Ok;
    std::string detail;

    static Response ok(std::string d = {}) { return {Status::Ok, std::move(d)}; }
    static Response error(std::string d) { return {Status::Error, std::move(d)}; }
    friend bool operator==(const Response&, const Response&) = default;
};

const char* to_string(Response::Status status);

/// Alternative index equals the wire tag.
using Message =
    std::variant<Welcome, ConnectionConfig, BundleAdu, DispatchRequest, DispatchResponse, Link, Keepalive, Response>;

inline Tag tag_of(const Message& m) { return static_cast<Tag>(m.index()); }
const char* to_string(Tag tag);

/// CBOR [tag, body] without the length prefix.
Bytes encode_message(const Message& m);
/// Throws Aap2Error(MalformedMessage).
Message decode_message(std::span<const std::uint8_t> cbor);

/// Length-prefixed frame.
Bytes frame(const Message& m);

/// Incremental reader for a stream of frames.
class Deframer {
public:
    explicit Deframer(std::size_t max_frame = kDefaultMaxFrame) : max_frame_(max_frame) {}

    void feed(std::span<const std::uint8_t> chunk);
    /// nullopt until a whole frame is buffered.
    /// Throws Aap2Error(FrameTooLarge | MalformedMessage).
    std::optional<Message> next();
    std::size_t buffered() const { return buffer_.size() - consumed_; }

private:
    std::size_t max_frame_;
    Bytes buffer_;
    std::size_t consumed_ = 0;
};

// ---- Direction of control ----

enum class Phase { AwaitConfig, ActiveClientControl, PassiveDaemonControl, Closed };
enum class Sender { Client, Daemon };

/// Message kinds as far as the state machine is concerned (Link split by op).
enum class Kind {
    Welcome,
    ConnectionConfig,
    BundleAdu,
    DispatchRequest,
    DispatchResponse,
    LinkUp,
    LinkDown,
    LinkNotifyUp,
    LinkNotifyDown,
    Keepalive,
    Response,
};
inline constexpr int kKindCount = 11;

Kind kind_of(const Message& m);
const char* to_string(Kind kind);
const char* to_string(Phase phase);

/// True if `sender` may send a message of `kind` in `phase`. Anything else
/// is a protocol violation answered by Response(ERROR) and a close.
bool permitted(Phase phase, Kind kind, Sender sender);

} // namespace bpmux::aap2
