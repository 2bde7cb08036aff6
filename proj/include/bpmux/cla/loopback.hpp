#pragma once

// In-process CLA used as a test double for the CLA contract. Instances
// register under a name in a LoopbackHub; opening "loopback:<peer>" pairs
// this instance with the peer, which sees an inbound link in return.

#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>

#include "bpmux/cla/cla.hpp"

namespace bpmux::cla {

class LoopbackCla;

class LoopbackHub {
public:
    static std::shared_ptr<LoopbackHub> global();

    void attach(const std::string& name, LoopbackCla* cla);
    void detach(const std::string& name, LoopbackCla* cla);
    LoopbackCla* find(const std::string& name) const;

private:
    mutable std::mutex mutex_;
    std::map<std::string, LoopbackCla*> members_;
};

class LoopbackCla final : public Cla {
public:
    struct Options {
        std::string instance_name;
        std::size_t max_bundle_size = 0;
        DtnTimeMs delay_ms = 0;
        double drop_probability = 0.0;
        std::uint64_t seed = 1;
    };

    LoopbackCla(Options options, std::shared_ptr<LoopbackHub> hub = LoopbackHub::global());
    ~LoopbackCla() override;

    std::string name() const override { return "loopback"; }
    std::size_t max_bundle_size() const override { return options_.max_bundle_size; }
    void start(ClaHost& host) override;
    void stop() override;
    std::unique_ptr<LinkTransport> open(const std::string& detail) override;

    const std::string& instance_name() const { return options_.instance_name; }
    const Clock& clock() const { return host_->clock(); }

    /// Draws from the instance's seeded RNG; true if a send should be lost.
    bool should_drop();
    DtnTimeMs delay_ms() const { return options_.delay_ms; }

    /// Called by a peer's open(): adopts the far side of a new channel.
    void accept_peer(const std::string& peer_name, std::unique_ptr<LinkTransport> transport);

private:
    Options options_;
    std::shared_ptr<LoopbackHub> hub_;
    ClaHost* host_ = nullptr;
    std::mutex rng_mutex_;
    std::mt19937_64 rng_;
};

} // namespace bpmux::cla
