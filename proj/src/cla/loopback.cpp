#include "bpmux/cla/loopback.hpp"

#include <chrono>
#include <condition_variable>
#include <deque>

namespace bpmux::cla {

namespace {

struct InFlight {
    DtnTimeMs deliver_at;
    Bytes data;
};

// One direction of a loopback channel.
struct Pipe {
    std::mutex mutex;
    std::condition_variable cv;
    std::deque<InFlight> items;
    bool closed = false;
};

class LoopbackTransport final : public LinkTransport {
public:
    LoopbackTransport(LoopbackCla& owner, std::shared_ptr<Pipe> inbox, std::shared_ptr<Pipe> outbox)
        : owner_(owner), inbox_(std::move(inbox)), outbox_(std::move(outbox))
    {
    }

    ~LoopbackTransport() override { shutdown(); }

    SendResult send(const Transmission& tx) override
    {
        if (owner_.max_bundle_size() != 0 && tx.serialized.size() > owner_.max_bundle_size())
            return SendResult::rejected("bundle exceeds loopback maximum size");
        std::lock_guard lock(outbox_->mutex);
        if (outbox_->closed)
            return SendResult::broken("peer closed");
        if (owner_.should_drop())
            return SendResult::ok();
        outbox_->items.push_back({owner_.clock().now() + owner_.delay_ms(),
                                  Bytes(tx.serialized.begin(), tx.serialized.end())});
        outbox_->cv.notify_all();
        return SendResult::ok();
    }

    std::optional<Bytes> receive() override
    {
        std::unique_lock lock(inbox_->mutex);
        for (;;) {
            if (inbox_->closed)
                return std::nullopt;
            if (!inbox_->items.empty() && inbox_->items.front().deliver_at <= owner_.clock().now()) {
                Bytes out = std::move(inbox_->items.front().data);
                inbox_->items.pop_front();
                return out;
            }
            // The clock may be simulated, so re-check periodically.
            inbox_->cv.wait_for(lock, std::chrono::milliseconds(2));
        }
    }

    void shutdown() override
    {
        for (auto* pipe : {inbox_.get(), outbox_.get()}) {
            std::lock_guard lock(pipe->mutex);
            pipe->closed = true;
            pipe->cv.notify_all();
        }
    }

private:
    LoopbackCla& owner_;
    std::shared_ptr<Pipe> inbox_;
    std::shared_ptr<Pipe> outbox_;
};

} // namespace

std::shared_ptr<LoopbackHub> LoopbackHub::global()
{
    static auto hub = std::make_shared<LoopbackHub>();
    return hub;
}

void LoopbackHub::attach(const std::string& name, LoopbackCla* cla)
{
    std::lock_guard lock(mutex_);
    members_[name] = cla;
}

void LoopbackHub::detach(const std::string& name, LoopbackCla* cla)
{
    std::lock_guard lock(mutex_);
    auto it = members_.find(name);
    if (it != members_.end() && it->second == cla)
        members_.erase(it);
}

LoopbackCla* LoopbackHub::find(const std::string& name) const
{
    std::lock_guard lock(mutex_);
    auto it = members_.find(name);
    return it == members_.end() ? nullptr : it->second;
}

LoopbackCla::LoopbackCla(Options options, std::shared_ptr<LoopbackHub> hub)
    : options_(std::move(options)), hub_(std::move(hub)), rng_(options_.seed)
{
}

LoopbackCla::~LoopbackCla() { stop(); }

void LoopbackCla::start(ClaHost& host)
{
    host_ = &host;
    hub_->attach(options_.instance_name, this);
}

void LoopbackCla::stop() { hub_->detach(options_.instance_name, this); }

bool LoopbackCla::should_drop()
{
    if (options_.drop_probability <= 0.0)
        return false;
    std::lock_guard lock(rng_mutex_);
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < options_.drop_probability;
}

std::unique_ptr<LinkTransport> LoopbackCla::open(const std::string& detail)
{
    LoopbackCla* peer = hub_->find(detail);
    if (!peer)
        throw ClaError(ClaError::Kind::ConnectionFailed, "no loopback instance named '" + detail + "'");
    auto a_to_b = std::make_shared<Pipe>();
    auto b_to_a = std::make_shared<Pipe>();
    peer->accept_peer(options_.instance_name, std::make_unique<LoopbackTransport>(*peer, a_to_b, b_to_a));
    return std::make_unique<LoopbackTransport>(*this, b_to_a, a_to_b);
}

void LoopbackCla::accept_peer(const std::string& peer_name, std::unique_ptr<LinkTransport> transport)
{
    host_->inbound_link(name(), peer_name, std::move(transport));
}

} // namespace bpmux::cla
