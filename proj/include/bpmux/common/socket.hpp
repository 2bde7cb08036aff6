#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>

namespace bpmux::net {

class SocketError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Owning wrapper around a stream socket file descriptor.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    ~Socket() { reset(); }

    Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
    Socket& operator=(Socket&& other) noexcept
    {
        if (this != &other) {
            reset();
            fd_ = std::exchange(other.fd_, -1);
        }
        return *this;
    }
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;

    int fd() const { return fd_; }
    bool valid() const { return fd_ >= 0; }
    void reset();

    /// Writes everything or returns false.
    bool write_all(std::span<const std::uint8_t> data) const;

    /// Reads up to buf.size() octets. 0 means orderly shutdown; nullopt on
    /// error or timeout.
    std::optional<std::size_t> read_some(std::span<std::uint8_t> buf,
                                         std::optional<std::chrono::milliseconds> timeout = std::nullopt) const;

    /// True once data, EOF or an error is pending; false on timeout.
    bool wait_readable(std::chrono::milliseconds timeout) const;

    /// Wakes up readers and writers blocked on this socket.
    void shutdown_both() const;

private:
    int fd_ = -1;
};

struct Listener {
    Socket socket;
    std::uint16_t port = 0;
    std::string path;
};

/// Binds and listens; port 0 selects an ephemeral port reported in the result.
Listener listen_tcp(const std::string& host, std::uint16_t port);
Listener listen_unix(const std::string& path);

/// Accepts one connection; nullopt when the listener was shut down.
std::optional<Socket> accept_connection(const Socket& listener, std::string* peer = nullptr);

Socket connect_tcp(const std::string& host, std::uint16_t port,
                   std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));
Socket connect_unix(const std::string& path);

/// Splits "host:port"; the port is everything after the last ':'.
std::pair<std::string, std::uint16_t> split_host_port(const std::string& text);

} // namespace bpmux::net
