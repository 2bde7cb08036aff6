#include "bpmux/cla/mtcp.hpp"

#include "bpmux/bp/cbor.hpp"
#include "bpmux/common/log.hpp"

namespace bpmux::cla {

Bytes mtcp_frame_header(std::size_t length)
{
    Bytes head = cbor::Writer().uint(length).data();
    head[0] |= static_cast<std::uint8_t>(cbor::MajorType::ByteString) << 5;
    return head;
}

Bytes mtcp_frame(std::span<const std::uint8_t> bundle_bytes)
{
    Bytes out = mtcp_frame_header(bundle_bytes.size());
    out.insert(out.end(), bundle_bytes.begin(), bundle_bytes.end());
    return out;
}

void MtcpDeframer::feed(std::span<const std::uint8_t> chunk)
{
    if (consumed_ > 0 && consumed_ == buffer_.size()) {
        buffer_.clear();
        consumed_ = 0;
    }
    buffer_.insert(buffer_.end(), chunk.begin(), chunk.end());
}

std::optional<Bytes> MtcpDeframer::next()
{
    const std::span<const std::uint8_t> pending(buffer_.data() + consumed_, buffer_.size() - consumed_);
    if (pending.empty())
        return std::nullopt;
    if ((pending[0] >> 5) != static_cast<std::uint8_t>(cbor::MajorType::ByteString) || (pending[0] & 0x1F) > 27)
        throw ClaError(ClaError::Kind::MalformedFrame, "MTCP frame is not a definite-length CBOR byte string");

    std::uint64_t length = 0;
    std::size_t head = 1;
    const std::uint8_t info = pending[0] & 0x1F;
    if (info < 24) {
        length = info;
    } else {
        const std::size_t width = std::size_t{1} << (info - 24);
        if (pending.size() < 1 + width)
            return std::nullopt;
        for (std::size_t i = 0; i < width; ++i)
            length = (length << 8) | pending[1 + i];
        head += width;
    }
    if (length > max_frame_)
        throw ClaError(ClaError::Kind::FrameTooLarge,
                       "MTCP frame of " + std::to_string(length) + " octets exceeds the limit");
    if (pending.size() < head + length)
        return std::nullopt;
    Bytes out(pending.begin() + static_cast<std::ptrdiff_t>(head),
              pending.begin() + static_cast<std::ptrdiff_t>(head + length));
    consumed_ += head + static_cast<std::size_t>(length);
    if (consumed_ > 1024 * 1024 && consumed_ * 2 > buffer_.size()) {
        buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(consumed_));
        consumed_ = 0;
    }
    return out;
}

MtcpTransport::MtcpTransport(net::Socket socket, std::size_t max_frame)
    : socket_(std::move(socket)), deframer_(max_frame)
{
}

SendResult MtcpTransport::send(const Transmission& tx)
{
    const Bytes header = mtcp_frame_header(tx.serialized.size());
    std::lock_guard lock(send_mutex_);
    if (!socket_.write_all(header) || !socket_.write_all(tx.serialized))
        return SendResult::broken("TCP send failed");
    return SendResult::ok();
}

std::optional<Bytes> MtcpTransport::receive()
{
    std::vector<std::uint8_t> buf(64 * 1024);
    for (;;) {
        try {
            if (auto frame = deframer_.next())
                return frame;
        } catch (const ClaError& e) {
            log::warn("mtcp", "closing connection: ", e.what());
            socket_.shutdown_both();
            return std::nullopt;
        }
        const auto n = socket_.read_some(buf);
        if (!n || *n == 0)
            return std::nullopt;
        deframer_.feed(std::span<const std::uint8_t>(buf.data(), *n));
    }
}

void MtcpTransport::shutdown() { socket_.shutdown_both(); }

MtcpCla::MtcpCla(Options options) : options_(std::move(options)) {}

MtcpCla::~MtcpCla() { stop(); }

std::size_t MtcpCla::max_bundle_size() const
{
    return options_.max_bundle_size != 0 ? options_.max_bundle_size : options_.max_frame;
}

void MtcpCla::start(ClaHost& host)
{
    host_ = &host;
    if (!options_.listen)
        return;
    listener_ = net::listen_tcp(options_.listen_host, options_.listen_port);
    bound_port_ = listener_.port;
    log::info("mtcp", "listening on ", options_.listen_host, ":", bound_port_);
    accept_thread_ = std::thread([this] { accept_loop(); });
}

void MtcpCla::stop()
{
    listener_.socket.shutdown_both();
    if (accept_thread_.joinable())
        accept_thread_.join();
    listener_.socket.reset();
}

void MtcpCla::accept_loop()
{
    for (;;) {
        std::string peer;
        auto conn = net::accept_connection(listener_.socket, &peer);
        if (!conn)
            return;
        log::info("mtcp", "inbound connection from ", peer);
        host_->inbound_link(name(), peer, std::make_unique<MtcpTransport>(std::move(*conn), options_.max_frame));
    }
}

std::unique_ptr<LinkTransport> MtcpCla::open(const std::string& detail)
{
    try {
        const auto [host, port] = net::split_host_port(detail);
        return std::make_unique<MtcpTransport>(net::connect_tcp(host, port), options_.max_frame);
    } catch (const net::SocketError& e) {
        throw ClaError(ClaError::Kind::ConnectionFailed, e.what());
    }
}

} // namespace bpmux::cla
