#pragma once

#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "bpmux/bp/cbor.hpp"

namespace bpmux::bp {

class EidError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A DTN endpoint identifier in the `dtn` or `ipn` scheme.
///
/// For `dtn`, `ssp` holds either "none" or "//<node-name>/<demux>". The demux
/// part may be empty (a node identifier) and may itself contain '/'.
/// For `ipn`, `node` and `service` hold the two numbers of "ipn:N.S".
struct EndpointId {
    enum class Scheme : std::uint8_t { Dtn = 1, Ipn = 2 };

    Scheme scheme = Scheme::Dtn;
    std::string ssp = "none";
    std::uint64_t node = 0;
    std::uint64_t service = 0;

    static EndpointId none() { return {}; }
    static EndpointId dtn(std::string_view node_name, std::string_view demux = {});
    static EndpointId ipn(std::uint64_t node_number, std::uint64_t service_number);

    /// Strict parser for the canonical text form. Throws EidError.
    static EndpointId parse(std::string_view text);

    /// Like parse(), but accepts "dtn://name" and returns the node identifier
    /// ("dtn://name/" or "ipn:N.0"). Throws EidError if a demux is present.
    static EndpointId parse_node_id(std::string_view text);

    std::string to_text() const;

    bool is_none() const { return scheme == Scheme::Dtn && ssp == "none"; }

    /// The node identifier of this endpoint: "dtn://name/" or "ipn:N.0".
    EndpointId node_id() const;
    bool is_node_id() const;
    bool same_node(const EndpointId& other) const { return node_id() == other.node_id(); }

    /// Node name for `dtn`, decimal node number for `ipn`.
    std::string node_name() const;
    /// Demux token for `dtn`, decimal service number for `ipn`.
    std::string demux() const;

    /// Endpoint on the same node as `*this` with the given agent id.
    EndpointId with_demux(std::string_view agent_id) const;

    void encode(cbor::Writer& w) const;
    static EndpointId decode(cbor::Reader& r);

    friend bool operator==(const EndpointId&, const EndpointId&) = default;
    friend auto operator<=>(const EndpointId&, const EndpointId&) = default;
};

/// True if `agent_id` can be used as the demux of a registration.
bool is_valid_agent_id(std::string_view agent_id);

} // namespace bpmux::bp
