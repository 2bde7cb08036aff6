#pragma once

// Blocking AAP2 client, used by the tools and the harness.

#include <chrono>
#include <optional>
#include <string>

#include "bpmux/aap2/messages.hpp"
#include "bpmux/common/socket.hpp"

namespace bpmux::aap2 {

class Client {
public:
    /// `target` is "host:port", or a filesystem path for the local socket.
    /// Reads the Welcome. Throws net::SocketError or Aap2Error.
    static Client connect(const std::string& target,
                          std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));

    Client(Client&&) = default;
    Client& operator=(Client&&) = default;

    const bp::EndpointId& node_id() const { return node_id_; }

    Response configure(const ConnectionConfig& config,
                       std::chrono::milliseconds timeout = std::chrono::milliseconds(10000));

    /// Throws Aap2Error(ConnectionClosed).
    void send(const Message& m);
    /// nullopt on timeout. Throws Aap2Error(ConnectionClosed | MalformedMessage).
    std::optional<Message> receive(std::chrono::milliseconds timeout);
    /// send() then receive(); throws Aap2Error(Timeout) if nothing comes back.
    Message call(const Message& m, std::chrono::milliseconds timeout = std::chrono::milliseconds(10000));

    void close();
    bool connected() const { return socket_.valid(); }

private:
    explicit Client(net::Socket socket) : socket_(std::move(socket)) {}

    net::Socket socket_;
    Deframer deframer_;
    bp::EndpointId node_id_;
};

} // namespace bpmux::aap2
