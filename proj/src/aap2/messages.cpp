#include "bpmux/aap2/messages.hpp"

namespace bpmux::aap2 {

namespace {

[[noreturn]] void malformed(const std::string& why)
{
    throw Aap2Error(Aap2Error::Kind::MalformedMessage, "malformed AAP2 message: " + why);
}

void put_eid(cbor::Writer& w, std::uint64_t key, const bp::EndpointId& eid) { w.uint(key).text(eid.to_text()); }

bp::EndpointId get_eid(cbor::Reader& r) { return bp::EndpointId::parse(r.read_text()); }

void put_ts(cbor::Writer& w, std::uint64_t key, const bp::CreationTimestamp& ts)
{
    w.uint(key).array(2).uint(ts.dtn_time_ms).uint(ts.sequence_number);
}

bp::CreationTimestamp get_ts(cbor::Reader& r)
{
    if (r.read_array() != 2u)
        malformed("creation timestamp must be [time, seq]");
    bp::CreationTimestamp ts;
    ts.dtn_time_ms = r.read_uint();
    ts.sequence_number = r.read_uint();
    return ts;
}

Bytes get_bytes(cbor::Reader& r)
{
    auto s = r.read_bytes();
    return {s.begin(), s.end()};
}

// Walks a body map, handing each known key to `fn` and skipping the rest.
template <typename Fn>
void each_key(cbor::Reader& r, Fn fn)
{
    for (std::size_t i = 0, n = r.read_map(); i < n; ++i) {
        const std::uint64_t key = r.read_uint();
        if (!fn(key))
            r.skip();
    }
}

struct BodyWriter {
    cbor::Writer& w;

    void operator()(const Welcome& m)
    {
        w.map(1);
        put_eid(w, 0, m.node_id);
    }
    void operator()(const ConnectionConfig& m)
    {
        w.map(5);
        w.uint(0).boolean(m.is_active_client);
        w.uint(1).text(m.agent_id);
        w.uint(2).bytes(m.shared_secret);
        w.uint(3).uint(m.auth);
        w.uint(4).bytes(m.admin_secret);
    }
    void operator()(const BundleAdu& m)
    {
        w.map(m.lifetime_ms ? 6 : 5);
        put_eid(w, 0, m.src);
        put_eid(w, 1, m.dst);
        put_ts(w, 2, m.creation);
        w.uint(3).bytes(m.payload);
        w.uint(4).boolean(m.is_bibe);
        if (m.lifetime_ms)
            w.uint(5).uint(*m.lifetime_ms);
    }
    void operator()(const DispatchRequest& m)
    {
        w.map(6);
        w.uint(0).uint(m.request_id);
        put_eid(w, 1, m.meta.source);
        put_eid(w, 2, m.meta.destination);
        put_ts(w, 3, m.meta.creation);
        w.uint(4).uint(m.meta.size);
        w.uint(5).uint(m.meta.lifetime_ms);
    }
    void operator()(const DispatchResponse& m)
    {
        const auto& d = m.decision;
        w.map(3 + (d.max_fragment_payload ? 1 : 0) + (d.reason.empty() ? 0 : 1));
        w.uint(0).uint(m.request_id);
        w.uint(1).uint(static_cast<std::uint64_t>(d.action));
        w.uint(2).array(d.next_hops.size());
        for (const auto& hop : d.next_hops) {
            w.array(2).text(hop.node_id.to_text());
            w.text(hop.cla_address.cla_name.empty() ? std::string() : hop.cla_address.to_text());
        }
        if (d.max_fragment_payload)
            w.uint(3).uint(*d.max_fragment_payload);
        if (!d.reason.empty())
            w.uint(4).text(d.reason);
    }
    void operator()(const Link& m)
    {
        w.map(5);
        w.uint(0).uint(static_cast<std::uint64_t>(m.op));
        put_eid(w, 1, m.node_id);
        w.uint(2).text(m.cla_address);
        w.uint(3).boolean(m.direct);
        w.uint(4).boolean(m.connected);
    }
    void operator()(const Keepalive&) { w.map(0); }
    void operator()(const Response& m)
    {
        w.map(m.detail.empty() ? 1 : 2);
        w.uint(0).uint(static_cast<std::uint64_t>(m.status));
        if (!m.detail.empty())
            w.uint(1).text(m.detail);
    }
};

Message read_body(Tag tag, cbor::Reader& r)
{
    switch (tag) {
    case Tag::Welcome: {
        Welcome m;
        each_key(r, [&](std::uint64_t k) {
            if (k != 0)
                return false;
            m.node_id = get_eid(r);
            return true;
        });
        return m;
    }
    case Tag::ConnectionConfig: {
        ConnectionConfig m;
        each_key(r, [&](std::uint64_t k) {
            switch (k) {
            case 0: m.is_active_client = r.read_bool(); return true;
            case 1: m.agent_id = r.read_text(); return true;
            case 2: m.shared_secret = get_bytes(r); return true;
            case 3: m.auth = static_cast<std::uint8_t>(r.read_uint()); return true;
            case 4: m.admin_secret = get_bytes(r); return true;
            default: return false;
            }
        });
        return m;
    }
    case Tag::BundleAdu: {
        BundleAdu m;
        each_key(r, [&](std::uint64_t k) {
            switch (k) {
            case 0: m.src = get_eid(r); return true;
            case 1: m.dst = get_eid(r); return true;
            case 2: m.creation = get_ts(r); return true;
            case 3: m.payload = get_bytes(r); return true;
            case 4: m.is_bibe = r.read_bool(); return true;
            case 5: m.lifetime_ms = r.read_uint(); return true;
            default: return false;
            }
        });
        return m;
    }
    case Tag::DispatchRequest: {
        DispatchRequest m;
        each_key(r, [&](std::uint64_t k) {
            switch (k) {
            case 0: m.request_id = r.read_uint(); return true;
            case 1: m.meta.source = get_eid(r); return true;
            case 2: m.meta.destination = get_eid(r); return true;
            case 3: m.meta.creation = get_ts(r); return true;
            case 4: m.meta.size = r.read_uint(); return true;
            case 5: m.meta.lifetime_ms = r.read_uint(); return true;
            default: return false;
            }
        });
        return m;
    }
    case Tag::DispatchResponse: {
        DispatchResponse m;
        each_key(r, [&](std::uint64_t k) {
            switch (k) {
            case 0: m.request_id = r.read_uint(); return true;
            case 1: {
                const auto action = r.read_uint();
                if (action > 2)
                    malformed("unknown dispatch action " + std::to_string(action));
                m.decision.action = static_cast<dispatch::DispatchDecision::Action>(action);
                return true;
            }
            case 2: {
                const auto n = r.read_array();
                if (!n)
                    malformed("indefinite next-hop list");
                for (std::size_t i = 0; i < *n; ++i) {
                    if (r.read_array() != 2u)
                        malformed("next hop must be [node, cla]");
                    dispatch::NextHop hop;
                    hop.node_id = get_eid(r);
                    const auto cla = r.read_text();
                    if (!cla.empty())
                        hop.cla_address = cla::ClaAddress::parse(cla);
                    m.decision.next_hops.push_back(std::move(hop));
                }
                return true;
            }
            case 3: m.decision.max_fragment_payload = r.read_uint(); return true;
            case 4: m.decision.reason = r.read_text(); return true;
            default: return false;
            }
        });
        return m;
    }
    case Tag::Link: {
        Link m;
        each_key(r, [&](std::uint64_t k) {
            switch (k) {
            case 0: {
                const auto op = r.read_uint();
                if (op > 3)
                    malformed("unknown link op " + std::to_string(op));
                m.op = static_cast<Link::Op>(op);
                return true;
            }
            case 1: m.node_id = get_eid(r); return true;
            case 2: m.cla_address = r.read_text(); return true;
            case 3: m.direct = r.read_bool(); return true;
            case 4: m.connected = r.read_bool(); return true;
            default: return false;
            }
        });
        return m;
    }
    case Tag::Keepalive:
        each_key(r, [](std::uint64_t) { return false; });
        return Keepalive{};
    case Tag::Response: {
        Response m;
        each_key(r, [&](std::uint64_t k) {
            switch (k) {
            case 0: {
                const auto status = r.read_uint();
                if (status > 4)
                    malformed("unknown status " + std::to_string(status));
                m.status = static_cast<Response::Status>(status);
                return true;
            }
            case 1: m.detail = r.read_text(); return true;
            default: return false;
            }
        });
        return m;
    }
    }
    malformed("unknown tag");
}

} // namespace

const char* to_string(Response::Status status)
{
    switch (status) {
    case Response::Status::Ok: return "OK";
    case Response::Status::Error: return "ERROR";
    case Response::Status::Unauthorized: return "UNAUTHORIZED";
    case Response::Status::Occupied: return "OCCUPIED";
    case Response::Status::Timeout: return "TIMEOUT";
    }
    return "?";
}

const char* to_string(Tag tag)
{
    switch (tag) {
    case Tag::Welcome: return "Welcome";
    case Tag::ConnectionConfig: return "ConnectionConfig";
    case Tag::BundleAdu: return "BundleADU";
    case Tag::DispatchRequest: return "DispatchRequest";
    case Tag::DispatchResponse: return "DispatchResponse";
    case Tag::Link: return "Link";
    case Tag::Keepalive: return "Keepalive";
    case Tag::Response: return "Response";
    }
    return "?";
}

Bytes encode_message(const Message& m)
{
    cbor::Writer w;
    w.array(2).uint(m.index());
    std::visit(BodyWriter{w}, m);
    return std::move(w).take();
}

Message decode_message(std::span<const std::uint8_t> data)
{
    try {
        cbor::Reader r(data);
        if (r.read_array() != 2u)
            malformed("expected [tag, body]");
        const std::uint64_t tag = r.read_uint();
        if (tag > static_cast<std::uint64_t>(Tag::Response))
            malformed("unknown tag " + std::to_string(tag));
        Message m = read_body(static_cast<Tag>(tag), r);
        if (!r.at_end())
            malformed("trailing bytes");
        return m;
    } catch (const cbor::Error& e) {
        malformed(e.what());
    } catch (const bp::EidError& e) {
        malformed(e.what());
    } catch (const cla::ClaError& e) {
        malformed(e.what());
    }
}

Bytes frame(const Message& m)
{
    const Bytes body = encode_message(m);
    const auto n = static_cast<std::uint32_t>(body.size());
    Bytes out;
    out.reserve(4 + body.size());
    for (int shift = 24; shift >= 0; shift -= 8)
        out.push_back(static_cast<std::uint8_t>(n >> shift));
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

void Deframer::feed(std::span<const std::uint8_t> chunk)
{
    if (consumed_ > 0 && consumed_ == buffer_.size()) {
        buffer_.clear();
        consumed_ = 0;
    }
    buffer_.insert(buffer_.end(), chunk.begin(), chunk.end());
}

std::optional<Message> Deframer::next()
{
    if (buffered() < 4)
        return std::nullopt;
    const std::uint8_t* p = buffer_.data() + consumed_;
    const std::size_t n = (std::size_t{p[0]} << 24) | (std::size_t{p[1]} << 16) | (std::size_t{p[2]} << 8) | p[3];
    if (n > max_frame_)
        throw Aap2Error(Aap2Error::Kind::FrameTooLarge,
                        "AAP2 frame of " + std::to_string(n) + " bytes exceeds " + std::to_string(max_frame_));
    if (buffered() < 4 + n)
        return std::nullopt;
    std::span<const std::uint8_t> body(buffer_.data() + consumed_ + 4, n);
    consumed_ += 4 + n;
    Message m = decode_message(body);
    if (consumed_ == buffer_.size()) {
        buffer_.clear();
        consumed_ = 0;
    }
    return m;
}

Kind kind_of(const Message& m)
{
    switch (tag_of(m)) {
    case Tag::Welcome: return Kind::Welcome;
    case Tag::ConnectionConfig: return Kind::ConnectionConfig;
    case Tag::BundleAdu: return Kind::BundleAdu;
    case Tag::DispatchRequest: return Kind::DispatchRequest;
    case Tag::DispatchResponse: return Kind::DispatchResponse;
    case Tag::Link:
        switch (std::get<Link>(m).op) {
        case Link::Op::Up: return Kind::LinkUp;
        case Link::Op::Down: return Kind::LinkDown;
        case Link::Op::NotifyUp: return Kind::LinkNotifyUp;
        case Link::Op::NotifyDown: return Kind::LinkNotifyDown;
        }
        break;
    case Tag::Keepalive: return Kind::Keepalive;
    case Tag::Response: return Kind::Response;
    }
    return Kind::Response;
}

const char* to_string(Kind kind)
{
    static const char* names[] = {"Welcome",  "ConnectionConfig", "BundleADU",      "DispatchRequest",
                                  "DispatchResponse", "Link(UP)", "Link(DOWN)", "Link(NOTIFY_UP)",
                                  "Link(NOTIFY_DOWN)", "Keepalive", "Response"};
    return names[static_cast<int>(kind)];
}

const char* to_string(Phase phase)
{
    switch (phase) {
    case Phase::AwaitConfig: return "AWAIT_CONFIG";
    case Phase::ActiveClientControl: return "ACTIVE_CLIENT_CONTROL";
    case Phase::PassiveDaemonControl: return "PASSIVE_DAEMON_CONTROL";
    case Phase::Closed: return "CLOSED";
    }
    return "?";
}

bool permitted(Phase phase, Kind kind, Sender sender)
{
    const bool client = sender == Sender::Client;
    switch (phase) {
    case Phase::AwaitConfig:
        // The daemon greets and answers the configuration.
        if (client)
            return kind == Kind::ConnectionConfig;
        return kind == Kind::Welcome || kind == Kind::Response;
    case Phase::ActiveClientControl:
        if (client)
            return kind == Kind::BundleAdu || kind == Kind::LinkUp || kind == Kind::LinkDown ||
                   kind == Kind::Keepalive;
        return kind == Kind::Response;
    case Phase::PassiveDaemonControl:
        if (client)
            return kind == Kind::Response || kind == Kind::DispatchResponse;
        return kind == Kind::BundleAdu || kind == Kind::DispatchRequest || kind == Kind::LinkNotifyUp ||
               kind == Kind::LinkNotifyDown || kind == Kind::Keepalive;
    case Phase::Closed:
        return false;
    }
    return false;
}

} // namespace bpmux::aap2
