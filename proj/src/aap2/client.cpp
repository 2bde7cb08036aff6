#include "bpmux/aap2/client.hpp"

#include <array>

namespace bpmux::aap2 {

Client Client::connect(const std::string& target, std::chrono::milliseconds timeout)
{
    net::Socket s;
    if (target.find('/') != std::string::npos) {
        s = net::connect_unix(target);
    } else {
        const auto [host, port] = net::split_host_port(target);
        s = net::connect_tcp(host, port, timeout);
    }
    Client c(std::move(s));
    auto first = c.receive(timeout);
    if (!first)
        throw Aap2Error(Aap2Error::Kind::Timeout, "no Welcome from " + target);
    if (!std::holds_alternative<Welcome>(*first))
        throw Aap2Error(Aap2Error::Kind::ProtocolError,
                        std::string("expected Welcome, got ") + to_string(tag_of(*first)));
    c.node_id_ = std::get<Welcome>(*first).node_id;
    return c;
}

Response Client::configure(const ConnectionConfig& config, std::chrono::milliseconds timeout)
{
    const Message reply = call(config, timeout);
    if (!std::holds_alternative<Response>(reply))
        throw Aap2Error(Aap2Error::Kind::ProtocolError,
                        std::string("expected Response, got ") + to_string(tag_of(reply)));
    return std::get<Response>(reply);
}

void Client::send(const Message& m)
{
    if (!socket_.valid() || !socket_.write_all(frame(m)))
        throw Aap2Error(Aap2Error::Kind::ConnectionClosed, "connection closed");
}

std::optional<Message> Client::receive(std::chrono::milliseconds timeout)
{
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    std::array<std::uint8_t, 16384> buf;
    for (;;) {
        if (auto m = deframer_.next())
            return m;
        if (!socket_.valid())
            throw Aap2Error(Aap2Error::Kind::ConnectionClosed, "connection closed");
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0 || !socket_.wait_readable(left))
            return std::nullopt;
        const auto n = socket_.read_some(buf);
        if (!n || *n == 0)
            throw Aap2Error(Aap2Error::Kind::ConnectionClosed, "connection closed by daemon");
        deframer_.feed(std::span<const std::uint8_t>(buf.data(), *n));
    }
}

Message Client::call(const Message& m, std::chrono::milliseconds timeout)
{
    send(m);
    auto reply = receive(timeout);
    if (!reply)
        throw Aap2Error(Aap2Error::Kind::Timeout, std::string("no answer to ") + to_string(tag_of(m)));
    return std::move(*reply);
}

void Client::close()
{
    socket_.shutdown_both();
    socket_.reset();
}

} // namespace bpmux::aap2
