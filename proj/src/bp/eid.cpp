#include "bpmux/bp/eid.hpp"

#include <charconv>

namespace bpmux::bp {

namespace {

constexpr std::string_view kDtnPrefix = "dtn:";
constexpr std::string_view kIpnPrefix = "ipn:";

std::uint64_t parse_number(std::string_view s, std::string_view whole)
{
    std::uint64_t value = 0;
    if (s.empty())
        throw EidError("missing number in EID '" + std::string(whole) + "'");
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw EidError("invalid number in EID '" + std::string(whole) + "'");
    return value;
}

bool valid_node_name(std::string_view name)
{
    if (name.empty())
        return false;
    for (char c : name) {
        if (c == '/' || static_cast<unsigned char>(c) <= 0x20 || c == 0x7F)
            return false;
    }
    return true;
}

} // namespace

EndpointId EndpointId::dtn(std::string_view node_name, std::string_view demux)
{
    if (!valid_node_name(node_name))
        throw EidError("invalid dtn node name '" + std::string(node_name) + "'");
    EndpointId e;
    e.scheme = Scheme::Dtn;
    e.ssp = "//" + std::string(node_name) + "/" + std::string(demux);
    return e;
}

EndpointId EndpointId::ipn(std::uint64_t node_number, std::uint64_t service_number)
{
    EndpointId e;
    e.scheme = Scheme::Ipn;
    e.ssp.clear();
    e.node = node_number;
    e.service = service_number;
    return e;
}

EndpointId EndpointId::parse(std::string_view text)
{
    if (text.starts_with(kDtnPrefix)) {
        const std::string_view ssp = text.substr(kDtnPrefix.size());
        if (ssp == "none")
            return none();
        if (!ssp.starts_with("//"))
            throw EidError("dtn EID must be 'dtn:none' or 'dtn://node/demux': '" + std::string(text) + "'");
        const std::string_view rest = ssp.substr(2);
        const auto slash = rest.find('/');
        if (slash == std::string_view::npos)
            throw EidError("dtn EID lacks '/' after the node name: '" + std::string(text) + "'");
        return dtn(rest.substr(0, slash), rest.substr(slash + 1));
    }
    if (text.starts_with(kIpnPrefix)) {
        const std::string_view ssp = text.substr(kIpnPrefix.size());
        const auto dot = ssp.find('.');
        if (dot == std::string_view::npos)
            throw EidError("ipn EID must be 'ipn:N.S': '" + std::string(text) + "'");
        return ipn(parse_number(ssp.substr(0, dot), text), parse_number(ssp.substr(dot + 1), text));
    }
    throw EidError("unsupported EID scheme: '" + std::string(text) + "'");
}

EndpointId EndpointId::parse_node_id(std::string_view text)
{
    EndpointId e;
    if (text.starts_with("dtn://") && text.find('/', 6) == std::string_view::npos)
        e = dtn(text.substr(6));
    else
        e = parse(text);
    if (e.is_none() || !e.is_node_id())
        throw EidError("not a node identifier: '" + std::string(text) + "'");
    return e;
}

std::string EndpointId::to_text() const
{
    if (scheme == Scheme::Ipn)
        return "ipn:" + std::to_string(node) + "." + std::to_string(service);
    return "dtn:" + ssp;
}

EndpointId EndpointId::node_id() const
{
    if (scheme == Scheme::Ipn)
        return ipn(node, 0);
    if (is_none())
        return none();
    return dtn(node_name());
}

bool EndpointId::is_node_id() const
{
    if (scheme == Scheme::Ipn)
        return service == 0;
    return !is_none() && demux().empty();
}

std::string EndpointId::node_name() const
{
    if (scheme == Scheme::Ipn)
        return std::to_string(node);
    if (is_none())
        return {};
    const auto slash = ssp.find('/', 2);
    return ssp.substr(2, slash - 2);
}

std::string EndpointId::demux() const
{
    if (scheme == Scheme::Ipn)
        return std::to_string(service);
    if (is_none())
        return {};
    const auto slash = ssp.find('/', 2);
    return ssp.substr(slash + 1);
}

EndpointId EndpointId::with_demux(std::string_view agent_id) const
{
    if (scheme == Scheme::Ipn)
        return ipn(node, parse_number(agent_id, agent_id));
    return dtn(node_name(), agent_id);
}

void EndpointId::encode(cbor::Writer& w) const
{
    w.array(2).uint(static_cast<std::uint64_t>(scheme));
    if (scheme == Scheme::Ipn) {
        w.array(2).uint(node).uint(service);
    } else if (is_none()) {
        w.uint(0);
    } else {
        w.text(ssp);
    }
}

EndpointId EndpointId::decode(cbor::Reader& r)
{
    const auto n = r.read_array();
    if (!n || *n != 2)
        throw cbor::Error(cbor::Error::Kind::Malformed, "EID must be a 2-element array");
    const std::uint64_t scheme_code = r.read_uint();
    if (scheme_code == static_cast<std::uint64_t>(Scheme::Dtn)) {
        if (r.peek_type() == cbor::MajorType::Unsigned) {
            if (r.read_uint() != 0)
                throw cbor::Error(cbor::Error::Kind::Malformed, "dtn SSP integer must be 0");
            return none();
        }
        const std::string ssp = r.read_text();
        try {
            EndpointId e = parse("dtn:" + ssp);
            if (e.is_none())
                throw EidError("dtn:none must be encoded as integer 0");
            return e;
        } catch (const EidError& err) {
            throw cbor::Error(cbor::Error::Kind::Malformed, err.what());
        }
    }
    if (scheme_code == static_cast<std::uint64_t>(Scheme::Ipn)) {
        const auto m = r.read_array();
        if (!m || *m != 2)
            throw cbor::Error(cbor::Error::Kind::Malformed, "ipn SSP must be a 2-element array");
        const std::uint64_t node_number = r.read_uint();
        const std::uint64_t service_number = r.read_uint();
        return ipn(node_number, service_number);
    }
    throw cbor::Error(cbor::Error::Kind::Malformed, "unknown EID scheme " + std::to_string(scheme_code));
}

bool is_valid_agent_id(std::string_view agent_id)
{
    if (agent_id.empty())
        return false;
    for (char c : agent_id) {
        if (static_cast<unsigned char>(c) <= 0x20 || c == 0x7F)
            return false;
    }
    return true;
}

} // namespace bpmux::bp
