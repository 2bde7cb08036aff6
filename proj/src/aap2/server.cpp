#include "bpmux/aap2/server.hpp"

#include <array>
#include <unistd.h>

#include "bpmux/common/log.hpp"

namespace bpmux::aap2 {

Session::Session(SessionId id, net::Socket socket, Backend& backend, SessionOptions options)
    : id_(id),
      socket_(std::move(socket)),
      backend_(backend),
      options_(options),
      deframer_(options.max_frame),
      outbound_(options.max_outbound)
{
}

Session::~Session()
{
    close();
    join();
}

void Session::start()
{
    reader_ = std::thread([self = shared_from_this()] { self->run(); });
}

void Session::close()
{
    if (closing_.exchange(true))
        return;
    socket_.shutdown_both();
    outbound_.close();
    std::lock_guard lock(call_mutex_);
    call_cv_.notify_all();
}

void Session::join()
{
    if (reader_.joinable() && reader_.get_id() != std::this_thread::get_id())
        reader_.join();
    else if (reader_.joinable())
        reader_.detach();
}

bool Session::push(Message m)
{
    if (phase_.load() != Phase::PassiveDaemonControl || closing_.load())
        return false;
    if (!permitted(Phase::PassiveDaemonControl, kind_of(m), Sender::Daemon)) {
        log::error("aap2", "session ", id_, ": refusing to send ", to_string(kind_of(m)));
        return false;
    }
    if (!outbound_.try_push(std::move(m))) {
        if (!closing_.load())
            log::warn("aap2", "session ", id_, ": outbound queue full, closing");
        close();
        return false;
    }
    return true;
}

Session::ReadStatus Session::read_message(std::optional<std::chrono::milliseconds> timeout, Message& out)
{
    const auto deadline = timeout ? std::chrono::steady_clock::now() + *timeout : std::chrono::steady_clock::time_point{};
    std::array<std::uint8_t, 16384> buf;
    for (;;) {
        if (auto m = deframer_.next()) {
            out = std::move(*m);
            return ReadStatus::Message;
        }
        if (closing_.load())
            return ReadStatus::Closed;
        if (timeout) {
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0 || !socket_.wait_readable(left))
                return ReadStatus::Timeout;
        }
        const auto n = socket_.read_some(buf);
        if (!n || *n == 0)
            return ReadStatus::Closed;
        deframer_.feed(std::span<const std::uint8_t>(buf.data(), *n));
    }
}

bool Session::write(const Message& m)
{
    const Bytes wire = frame(m);
    std::lock_guard lock(write_mutex_);
    return socket_.write_all(wire);
}

void Session::violation(const std::string& why)
{
    log::warn("aap2", "session ", id_, ": protocol violation: ", why);
    write(Response::error(why));
    close();
}

void Session::run()
{
    bool configured = false;
    try {
        if (!write(Welcome{backend_.local_node_id()})) {
            close();
        } else {
            Message m;
            switch (read_message(options_.keepalive_timeout, m)) {
            case ReadStatus::Timeout:
                log::info("aap2", "session ", id_, ": no configuration within timeout");
                close();
                break;
            case ReadStatus::Closed:
                close();
                break;
            case ReadStatus::Message:
                if (kind_of(m) != Kind::ConnectionConfig) {
                    violation(std::string(to_string(kind_of(m))) + " not permitted in " +
                              to_string(Phase::AwaitConfig));
                    break;
                }
                config_ = std::get<ConnectionConfig>(m);
                const ConfigResult result = backend_.configure(shared_from_this(), config_);
                configured = result.response.status == Response::Status::Ok;
                granted_ = result.granted;
                if (!configured) {
                    log::info("aap2", "session ", id_, ": configuration refused: ", to_string(result.response.status),
                              " ", result.response.detail);
                    write(result.response);
                    close();
                    break;
                }
                if (config_.is_active_client) {
                    phase_ = Phase::ActiveClientControl;
                    write(result.response);
                    serve_active();
                } else {
                    // The phase must be set before OK goes out so that pushes
                    // triggered by activation are accepted.
                    phase_ = Phase::PassiveDaemonControl;
                    write(result.response);
                    serve_passive();
                }
            }
        }
    } catch (const Aap2Error& e) {
        violation(e.what());
    } catch (const std::exception& e) {
        log::error("aap2", "session ", id_, ": ", e.what());
        close();
    }
    close();
    if (writer_.joinable())
        writer_.join();
    phase_ = Phase::Closed;
    if (configured)
        backend_.closed(*this);
    finished_ = true;
}

void Session::serve_active()
{
    while (!closing_.load()) {
        Message m;
        const ReadStatus status = read_message(options_.keepalive_timeout, m);
        if (status == ReadStatus::Timeout) {
            log::info("aap2", "session ", id_, ": keepalive timeout");
            return;
        }
        if (status == ReadStatus::Closed)
            return;
        const Kind kind = kind_of(m);
        if (!permitted(Phase::ActiveClientControl, kind, Sender::Client)) {
            violation(std::string(to_string(kind)) + " not permitted in " + to_string(Phase::ActiveClientControl));
            return;
        }
        Response reply;
        switch (kind) {
        case Kind::BundleAdu: {
            const auto& adu = std::get<BundleAdu>(m);
            if (adu.payload.size() > kMaxAduSize)
                reply = Response::error("ADU exceeds " + std::to_string(kMaxAduSize) + " octets");
            else
                reply = backend_.send_adu(*this, adu);
            break;
        }
        case Kind::LinkUp:
        case Kind::LinkDown:
            if (!(granted_ & auth::kLinkControl))
                reply = {Response::Status::Unauthorized, "LINK_CONTROL not granted"};
            else
                reply = backend_.link_request(*this, std::get<Link>(m));
            break;
        default: // Keepalive
            reply = Response::ok();
            break;
        }
        if (!write(reply))
            return;
    }
}

void Session::serve_passive()
{
    writer_ = std::thread([this] { writer(); });
    backend_.activated(shared_from_this());
    while (!closing_.load()) {
        Message m;
        if (read_message(std::nullopt, m) != ReadStatus::Message)
            return;
        const Kind kind = kind_of(m);
        if (!permitted(Phase::PassiveDaemonControl, kind, Sender::Client)) {
            violation(std::string(to_string(kind)) + " not permitted in " + to_string(Phase::PassiveDaemonControl));
            return;
        }
        std::unique_lock lock(call_mutex_);
        if (!awaiting_ || answered_) {
            lock.unlock();
            violation(std::string("unsolicited ") + to_string(kind));
            return;
        }
        if (kind == Kind::DispatchResponse) {
            if (*awaiting_ != Kind::DispatchRequest) {
                lock.unlock();
                violation(std::string("DispatchResponse does not answer ") + to_string(*awaiting_));
                return;
            }
            backend_.dispatch_response(*this, std::get<DispatchResponse>(m));
        } else {
            const auto& r = std::get<Response>(m);
            if (r.status != Response::Status::Ok)
                log::debug("aap2", "session ", id_, ": client answered ", to_string(*awaiting_), " with ",
                           to_string(r.status), " ", r.detail);
        }
        answered_ = true;
        call_cv_.notify_all();
    }
}

void Session::writer()
{
    const auto idle = options_.keepalive_timeout / 2;
    while (!closing_.load()) {
        auto next = outbound_.pop_for(idle);
        if (closing_.load())
            return;
        Message m = next ? std::move(*next) : Message{Keepalive{}};
        {
            std::lock_guard lock(call_mutex_);
            awaiting_ = kind_of(m);
            answered_ = false;
        }
        if (!write(m)) {
            close();
            return;
        }
        std::unique_lock lock(call_mutex_);
        const bool ok = call_cv_.wait_for(lock, options_.keepalive_timeout, [&] { return answered_ || closing_.load(); });
        if (closing_.load())
            return;
        if (!ok) {
            log::info("aap2", "session ", id_, ": no answer to ", to_string(*awaiting_), " within timeout");
            lock.unlock();
            close();
            return;
        }
        awaiting_.reset();
    }
}

Server::Server(Backend& backend, Options options) : backend_(backend), options_(std::move(options)) {}

Server::~Server() { stop(); }

void Server::start()
{
    if (!options_.tcp.empty()) {
        const auto [host, port] = net::split_host_port(options_.tcp);
        listeners_.push_back(net::listen_tcp(host, port));
        tcp_port_ = listeners_.back().port;
    }
    if (!options_.socket_path.empty())
        listeners_.push_back(net::listen_unix(options_.socket_path));
    for (const auto& l : listeners_)
        acceptors_.emplace_back([this, &l] { accept_loop(l.socket); });
}

void Server::accept_loop(const net::Socket& listener)
{
    while (!stopping_.load()) {
        auto conn = net::accept_connection(listener);
        if (!conn)
            return;
        if (stopping_.load())
            return;
        auto session = std::make_shared<Session>(next_id_++, std::move(*conn), backend_, options_.session);
        {
            std::lock_guard lock(sessions_mutex_);
            sessions_.push_back(session);
        }
        session->start();
        reap();
    }
}

void Server::reap()
{
    std::list<std::shared_ptr<Session>> done;
    {
        std::lock_guard lock(sessions_mutex_);
        for (auto it = sessions_.begin(); it != sessions_.end();) {
            if ((*it)->finished()) {
                done.push_back(std::move(*it));
                it = sessions_.erase(it);
            } else {
                ++it;
            }
        }
    }
    for (auto& s : done)
        s->join();
}

std::size_t Server::session_count()
{
    reap();
    std::lock_guard lock(sessions_mutex_);
    return sessions_.size();
}

void Server::stop()
{
    if (stopping_.exchange(true))
        return;
    for (auto& l : listeners_)
        l.socket.shutdown_both();
    for (auto& t : acceptors_)
        if (t.joinable())
            t.join();
    std::list<std::shared_ptr<Session>> all;
    {
        std::lock_guard lock(sessions_mutex_);
        all.swap(sessions_);
    }
    for (auto& s : all)
        s->close();
    for (auto& s : all)
        s->join();
    for (auto& l : listeners_) {
        l.socket.reset();
        if (!l.path.empty())
            ::unlink(l.path.c_str());
    }
    listeners_.clear();
}

} // namespace bpmux::aap2
