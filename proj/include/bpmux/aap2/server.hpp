#pragma once

// AAP2 daemon side. One Session per accepted stream. The daemon greets with
// Welcome, the client configures the connection once, and from then on only
// the controlling side issues calls: the client on an active connection,
// the daemon on a passive one. Every call is answered before the next one.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "bpmux/aap2/messages.hpp"
#include "bpmux/common/queue.hpp"
#include "bpmux/common/socket.hpp"

namespace bpmux::aap2 {

using SessionId = std::uint64_t;

class Session;

struct ConfigResult {
    Response response;
    /// Granted auth bits when the response is OK.
    std::uint8_t granted = 0;
};

/// The bundle processor as seen by the protocol server. Calls come from
/// session threads.
class Backend {
public:
    virtual ~Backend() = default;

    virtual bp::EndpointId local_node_id() const = 0;
    /// Validates, authorizes and registers in one step. Anything but OK
    /// closes the connection.
    virtual ConfigResult configure(const std::shared_ptr<Session>& session, const ConnectionConfig& config) = 0;
    /// Passive sessions, after Response(OK) went out; the daemon may push from now on.
    virtual void activated(const std::shared_ptr<Session>& session) = 0;
    virtual Response send_adu(Session& session, const BundleAdu& adu) = 0;
    virtual Response link_request(Session& session, const Link& link) = 0;
    virtual void dispatch_response(Session& session, const DispatchResponse& response) = 0;
    /// Exactly once for every session whose configuration succeeded.
    virtual void closed(Session& session) = 0;
};

struct SessionOptions {
    std::chrono::milliseconds keepalive_timeout{30000};
    std::size_t max_outbound = 64;
    std::size_t max_frame = kDefaultMaxFrame;
};

class Session : public std::enable_shared_from_this<Session> {
public:
    Session(SessionId id, net::Socket socket, Backend& backend, SessionOptions options);
    ~Session();

    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;

    void start();
    /// Non-blocking; wakes both threads.
    void close();
    void join();
    bool finished() const { return finished_.load(); }
    bool closing() const { return closing_.load(); }

    /// Passive sessions only. Queues a daemon call; false if the session is
    /// not accepting. Overflow closes the session.
    bool push(Message m);

    SessionId id() const { return id_; }
    Phase phase() const { return phase_.load(); }
    /// Valid once configured.
    const ConnectionConfig& config() const { return config_; }
    std::uint8_t granted() const { return granted_; }
    std::size_t outbound_queued() const { return outbound_.size(); }

private:
    enum class ReadStatus { Message, Timeout, Closed };

    void run();
    void serve_active();
    void serve_passive();
    void writer();
    ReadStatus read_message(std::optional<std::chrono::milliseconds> timeout, Message& out);
    bool write(const Message& m);
    void violation(const std::string& why);

    const SessionId id_;
    net::Socket socket_;
    Backend& backend_;
    const SessionOptions options_;
    Deframer deframer_;

    std::atomic<Phase> phase_{Phase::AwaitConfig};
    std::atomic<bool> closing_{false};
    std::atomic<bool> finished_{false};
    ConnectionConfig config_;
    std::uint8_t granted_ = 0;

    std::mutex write_mutex_;
    MessageQueue<Message> outbound_;

    // Outstanding daemon call on a passive session.
    std::mutex call_mutex_;
    std::condition_variable call_cv_;
    std::optional<Kind> awaiting_;
    bool answered_ = false;

    std::thread reader_;
    std::thread writer_;
};

class Server {
public:
    struct Options {
        /// "host:port"; empty disables TCP. Port 0 picks an ephemeral port.
        std::string tcp;
        /// Empty disables the local socket.
        std::string socket_path;
        SessionOptions session;
    };

    Server(Backend& backend, Options options);
    ~Server();

    /// Binds the listeners. Throws net::SocketError.
    void start();
    void stop();

    std::uint16_t tcp_port() const { return tcp_port_; }
    const std::string& socket_path() const { return options_.socket_path; }
    std::size_t session_count();

private:
    void accept_loop(const net::Socket& listener);
    void reap();

    Backend& backend_;
    Options options_;
    std::vector<net::Listener> listeners_;
    std::vector<std::thread> acceptors_;
    std::uint16_t tcp_port_ = 0;
    std::atomic<bool> stopping_{false};
    std::atomic<SessionId> next_id_{1};
    std::mutex sessions_mutex_;
    std::list<std::shared_ptr<Session>> sessions_;
};

} // namespace bpmux::aap2
