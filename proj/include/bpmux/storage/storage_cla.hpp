#pragma once

// Storage as a convergence layer: "transmitting" a bundle to it persists the
// bundle, and recalled bundles come back on the link's receive side. It is
// controlled by command bundles sent to a service endpoint on the local node.
// The store is touched only by the storage worker thread.

#include <atomic>
#include <filesystem>
#include <functional>
#include <future>
#include <memory>
#include <thread>

#include "bpmux/cla/cla.hpp"
#include "bpmux/common/queue.hpp"
#include "bpmux/storage/command.hpp"
#include "bpmux/storage/store.hpp"

namespace bpmux::storage {

class StorageCla final : public cla::Cla {
public:
    struct Options {
        std::filesystem::path dir;
        std::uint64_t quota = Store::kDefaultQuota;
        std::string endpoint = "sqa";
        DtnTimeMs sweep_interval_ms = 10000;
        std::uint64_t reply_lifetime_ms = 3600 * 1000;
    };

    explicit StorageCla(Options options);
    ~StorageCla() override;

    std::string name() const override { return "storage"; }
    std::size_t max_bundle_size() const override { return 0; }
    void start(cla::ClaHost& host) override;
    void stop() override;
    std::unique_ptr<cla::LinkTransport> open(const std::string& detail) override;

    /// Runs `fn` on the storage worker and waits for it.
    template <typename Fn>
    auto run(Fn fn) -> decltype(fn(std::declval<Store&>()));

    std::size_t sweep_now();
    std::vector<RecordMeta> query(const BundleFilter& filter);
    CommandReply execute(const StorageCommand& cmd);

    const Options& options() const { return options_; }

    /// Internal: used by the transport.
    void wait_stopped(const std::atomic<bool>& stop);
    cla::SendResult persist(const cla::Transmission& tx);

private:
    using Job = std::function<void()>;

    void worker();
    void handle_command_bundle(const bp::Bundle& bundle);
    /// With `reply_to` set, also sends the reply bundle to the host.
    CommandReply execute_on_worker(const StorageCommand& cmd, const bp::EndpointId* reply_to);
    Bytes reply_bundle(const bp::EndpointId& to, const CommandReply& reply);

    Options options_;
    cla::ClaHost* host_ = nullptr;
    std::unique_ptr<Store> store_;
    MessageQueue<Job> jobs_{0};
    /// Never carries anything; closing it releases the transport's receive().
    MessageQueue<Bytes> stopped_{0};
    std::thread worker_;
    DtnTimeMs last_sweep_ = 0;
    std::uint64_t reply_seq_ = 0;
};

template <typename Fn>
auto StorageCla::run(Fn fn) -> decltype(fn(std::declval<Store&>()))
{
    using R = decltype(fn(std::declval<Store&>()));
    auto task = std::make_shared<std::packaged_task<R()>>([this, fn = std::move(fn)]() mutable { return fn(*store_); });
    auto result = task->get_future();
    if (!jobs_.push([task] { (*task)(); }))
        throw StorageError(StorageError::Kind::IoFailure, "storage is stopped");
    return result.get();
}

} // namespace bpmux::storage
