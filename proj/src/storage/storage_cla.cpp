#include "bpmux/storage/storage_cla.hpp"

#include "bpmux/bp/codec.hpp"
#include "bpmux/common/log.hpp"

namespace bpmux::storage {

namespace {

class StorageTransport final : public cla::LinkTransport {
public:
    explicit StorageTransport(StorageCla& owner) : owner_(owner) {}

    cla::SendResult send(const cla::Transmission& tx) override
    {
        if (stop_.load())
            return cla::SendResult::broken("storage link closed");
        return owner_.persist(tx);
    }

    // Recalled bundles and replies are handed to the host directly, in
    // batches; nothing ever arrives on this side of the link.
    std::optional<cla::Bytes> receive() override
    {
        owner_.wait_stopped(stop_);
        return std::nullopt;
    }

    void shutdown() override { stop_ = true; }

    cla::Arrival arrival() const override { return cla::Arrival::FromLocalCla; }

private:
    StorageCla& owner_;
    std::atomic<bool> stop_{false};
};

} // namespace

StorageCla::StorageCla(Options options) : options_(std::move(options)) {}

StorageCla::~StorageCla() { stop(); }

void StorageCla::start(cla::ClaHost& host)
{
    host_ = &host;
    store_ = std::make_unique<Store>(options_.dir, options_.quota);
    last_sweep_ = host.clock().now();
    host.register_service_endpoint(options_.endpoint, [this](bp::Bundle bundle) {
        jobs_.push([this, bundle = std::move(bundle)] { handle_command_bundle(bundle); });
    });
    worker_ = std::thread([this] { worker(); });
}

void StorageCla::stop()
{
    jobs_.close();
    stopped_.close();
    if (worker_.joinable())
        worker_.join();
}

std::unique_ptr<cla::LinkTransport> StorageCla::open(const std::string&)
{
    if (!store_)
        throw cla::ClaError(cla::ClaError::Kind::ConnectionFailed, "storage is not started");
    return std::make_unique<StorageTransport>(*this);
}

void StorageCla::worker()
{
    for (;;) {
        auto job = jobs_.pop_for(std::chrono::milliseconds(100));
        if (job) {
            (*job)();
        } else if (jobs_.closed()) {
            return;
        }
        const DtnTimeMs now = host_->clock().now();
        if (options_.sweep_interval_ms != 0 && now >= last_sweep_ + options_.sweep_interval_ms) {
            last_sweep_ = now;
            store_->expire_sweep(now);
        }
    }
}

cla::SendResult StorageCla::persist(const cla::Transmission& tx)
{
    const DtnTimeMs now = host_->clock().now();
    Bytes data(tx.serialized.begin(), tx.serialized.end());
    try {
        const std::string id = run([&](Store& s) { return s.put_serialized(data, now); });
        log::debug("storage", "stored ", id);
        return cla::SendResult::ok();
    } catch (const StorageError& e) {
        log::warn("storage", "store failed: ", e.what());
        if (e.kind() == StorageError::Kind::StorageFull)
            return cla::SendResult::rejected("StorageFull");
        return cla::SendResult::rejected(e.what());
    }
}

void StorageCla::wait_stopped(const std::atomic<bool>& stop)
{
    while (!stop.load() && !stopped_.pop_for(std::chrono::milliseconds(50)) && !stopped_.closed()) {
    }
}

std::size_t StorageCla::sweep_now()
{
    const DtnTimeMs now = host_->clock().now();
    return run([now](Store& s) { return s.expire_sweep(now); });
}

std::vector<RecordMeta> StorageCla::query(const BundleFilter& filter)
{
    return run([&](Store& s) { return s.query(filter); });
}

CommandReply StorageCla::execute(const StorageCommand& cmd)
{
    return run([&](Store&) { return execute_on_worker(cmd, nullptr); });
}

CommandReply StorageCla::execute_on_worker(const StorageCommand& cmd, const bp::EndpointId* reply_to)
{
    CommandReply reply;
    switch (cmd.verb) {
    case Verb::Query:
        reply.is_query = true;
        reply.records = store_->query(cmd.filter);
        break;
    case Verb::Delete:
        reply.count = store_->remove(cmd.filter);
        break;
    case Verb::Recall: {
        const DtnTimeMs now = host_->clock().now();
        std::vector<std::pair<std::string, Bytes>> loaded;
        for (const auto& meta : store_->query(cmd.filter)) {
            try {
                bp::Bundle bundle = bp::decode_bundle(store_->load(meta.storage_id));
                // Time spent on disk counts as residence time.
                if (auto age = bp::bundle_age_ms(bundle))
                    bp::set_bundle_age_ms(bundle, *age + (now > meta.stored_at ? now - meta.stored_at : 0));
                loaded.emplace_back(meta.storage_id, bp::encode_bundle(bundle));
            } catch (const std::exception& e) {
                log::warn("storage", "cannot recall ", meta.storage_id, ": ", e.what());
            }
        }
        reply.count = loaded.size();
        // One batch, reply first: the node processes all of it before any
        // dispatcher answer for the recalled bundles can get in between.
        std::vector<Bytes> batch;
        if (reply_to) {
            batch.push_back(reply_bundle(*reply_to, reply));
            reply_to = nullptr;
        }
        for (auto& [id, encoded] : loaded)
            batch.push_back(std::move(encoded));
        if (!host_->bundles_received({name(), "local"}, std::move(batch), cla::Arrival::FromLocalCla))
            break;
        if (cmd.delete_after)
            for (const auto& [id, encoded] : loaded)
                store_->remove_id(id);
        break;
    }
    }
    if (reply_to)
        host_->bundle_received({name(), "local"}, reply_bundle(*reply_to, reply), cla::Arrival::FromLocalCla);
    return reply;
}

void StorageCla::handle_command_bundle(const bp::Bundle& bundle)
{
    if (!bundle.source.same_node(host_->local_node_id())) {
        log::warn("storage", "ignoring command from non-local source ", bundle.source.to_text());
        return;
    }
    try {
        execute_on_worker(decode_command(bundle.payload()), &bundle.source);
    } catch (const StorageError& e) {
        CommandReply reply;
        reply.status = CommandReply::Status::Error;
        reply.error = e.what();
        host_->bundle_received({name(), "local"}, reply_bundle(bundle.source, reply), cla::Arrival::FromLocalCla);
    }
}

Bytes StorageCla::reply_bundle(const bp::EndpointId& to, const CommandReply& reply)
{
    const bp::EndpointId self = host_->local_node_id().with_demux(options_.endpoint);
    return bp::encode_bundle(bp::make_bundle(to, self, {host_->clock().now(), reply_seq_++},
                                             options_.reply_lifetime_ms, encode_reply(reply)));
}

} // namespace bpmux::storage
