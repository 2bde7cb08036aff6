#pragma once

// Minimal TCP convergence layer: every bundle travels as one definite-length
// CBOR byte string, back to back on a single bidirectional TCP connection.

#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "bpmux/cla/cla.hpp"
#include "bpmux/common/socket.hpp"

namespace bpmux::cla {

inline constexpr std::size_t kDefaultMaxFrame = 16 * 1024 * 1024;
inline constexpr std::uint16_t kDefaultMtcpPort = 4556;

/// CBOR byte-string head announcing `length` octets of bundle.
Bytes mtcp_frame_header(std::size_t length);
Bytes mtcp_frame(std::span<const std::uint8_t> bundle_bytes);

/// Incremental decoder for an MTCP byte stream. Frames may be split across
/// arbitrary feed() boundaries.
class MtcpDeframer {
public:
    explicit MtcpDeframer(std::size_t max_frame = kDefaultMaxFrame) : max_frame_(max_frame) {}

    void feed(std::span<const std::uint8_t> chunk);

    /// Next complete frame content, or nullopt if more input is needed.
    /// Throws ClaError(MalformedFrame | FrameTooLarge).
    std::optional<Bytes> next();

    std::size_t buffered() const { return buffer_.size() - consumed_; }

private:
    std::size_t max_frame_;
    Bytes buffer_;
    std::size_t consumed_ = 0;
};

class MtcpTransport final : public LinkTransport {
public:
    MtcpTransport(net::Socket socket, std::size_t max_frame);

    SendResult send(const Transmission& tx) override;
    std::optional<Bytes> receive() override;
    void shutdown() override;

private:
    net::Socket socket_;
    std::mutex send_mutex_;
    MtcpDeframer deframer_;
};

class MtcpCla final : public Cla {
public:
    struct Options {
        std::string listen_host = "127.0.0.1";
        std::uint16_t listen_port = kDefaultMtcpPort;
        bool listen = true;
        std::size_t max_bundle_size = 0;
        std::size_t max_frame = kDefaultMaxFrame;
    };

    explicit MtcpCla(Options options);
    ~MtcpCla() override;

    std::string name() const override { return "mtcp"; }
    std::size_t max_bundle_size() const override;
    void start(ClaHost& host) override;
    void stop() override;
    std::unique_ptr<LinkTransport> open(const std::string& detail) override;

    /// Actual listening port (differs from the option when it was 0).
    std::uint16_t bound_port() const { return bound_port_; }

private:
    void accept_loop();

    Options options_;
    ClaHost* host_ = nullptr;
    net::Listener listener_;
    std::uint16_t bound_port_ = 0;
    std::thread accept_thread_;
};

} // namespace bpmux::cla
