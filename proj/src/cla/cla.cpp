#include "bpmux/cla/cla.hpp"

#include "bpmux/bp/codec.hpp"
#include "bpmux/common/log.hpp"

namespace bpmux::cla {

const char* to_string(ClaError::Kind kind)
{
    switch (kind) {
    case ClaError::Kind::DuplicateClaName: return "DuplicateClaName";
    case ClaError::Kind::UnknownCla: return "UnknownCla";
    case ClaError::Kind::InvalidAddress: return "InvalidAddress";
    case ClaError::Kind::ConnectionFailed: return "ConnectionFailed";
    case ClaError::Kind::MalformedFrame: return "MalformedFrame";
    case ClaError::Kind::FrameTooLarge: return "FrameTooLarge";
    }
    return "?";
}

const char* to_string(LinkState state)
{
    switch (state) {
    case LinkState::Connecting: return "CONNECTING";
    case LinkState::Active: return "ACTIVE";
    case LinkState::Closing: return "CLOSING";
    case LinkState::Down: return "DOWN";
    }
    return "?";
}

ClaAddress ClaAddress::parse(std::string_view text)
{
    const auto colon = text.find(':');
    if (colon == std::string_view::npos || colon == 0)
        throw ClaError(ClaError::Kind::InvalidAddress, "CLA address must be '<cla>:<detail>': '" + std::string(text) + "'");
    return {std::string(text.substr(0, colon)), std::string(text.substr(colon + 1))};
}

void ClaRegistry::register_cla(const std::string& name, std::shared_ptr<Cla> instance)
{
    std::lock_guard lock(mutex_);
    if (!clas_.emplace(name, std::move(instance)).second)
        throw ClaError(ClaError::Kind::DuplicateClaName, "CLA '" + name + "' is already registered");
}

std::shared_ptr<Cla> ClaRegistry::find(const std::string& name) const
{
    std::lock_guard lock(mutex_);
    auto it = clas_.find(name);
    return it == clas_.end() ? nullptr : it->second;
}

std::shared_ptr<Cla> ClaRegistry::resolve(const std::string& name) const
{
    auto cla = find(name);
    if (!cla)
        throw ClaError(ClaError::Kind::UnknownCla, "no CLA named '" + name + "'");
    return cla;
}

ClaAddress ClaRegistry::parse_for_use(std::string_view text) const
{
    ClaAddress address = ClaAddress::parse(text);
    resolve(address.cla_name);
    return address;
}

std::vector<std::shared_ptr<Cla>> ClaRegistry::all() const
{
    std::lock_guard lock(mutex_);
    std::vector<std::shared_ptr<Cla>> out;
    for (const auto& [name, cla] : clas_)
        out.push_back(cla);
    return out;
}

Link::Link(LinkId id, ClaAddress address, std::unique_ptr<LinkTransport> transport, ClaHost& host,
           std::size_t max_bundle_size, std::size_t queue_capacity)
    : id_(id),
      address_(std::move(address)),
      transport_(std::move(transport)),
      host_(host),
      max_bundle_size_(max_bundle_size),
      tx_queue_(queue_capacity)
{
}

Link::~Link() { close(); }

void Link::start()
{
    state_ = LinkState::Active;
    rx_thread_ = std::thread([this] { rx_loop(); });
    tx_thread_ = std::thread([this] { tx_loop(); });
}

bool Link::enqueue(OutboundBundle item)
{
    if (state_.load() != LinkState::Active)
        return false;
    return tx_queue_.try_push(std::move(item));
}

std::vector<OutboundBundle> Link::close()
{
    LinkState expected = state_.load();
    if (expected == LinkState::Down)
        return {};
    state_ = LinkState::Closing;
    tx_queue_.close();
    transport_->shutdown();
    if (rx_thread_.joinable())
        rx_thread_.join();
    if (tx_thread_.joinable())
        tx_thread_.join();
    std::vector<OutboundBundle> out;
    {
        std::lock_guard lock(unsent_mutex_);
        out = std::move(unsent_);
        unsent_.clear();
    }
    for (auto& item : tx_queue_.drain())
        out.push_back(std::move(item));
    state_ = LinkState::Down;
    return out;
}

void Link::rx_loop()
{
    while (state_.load() == LinkState::Active) {
        auto data = transport_->receive();
        if (!data)
            break;
        host_.bundle_received(address_, std::move(*data), transport_->arrival());
    }
    if (state_.load() == LinkState::Active) {
        log::info("cla", "link ", address_.to_text(), " lost (receive side)");
        host_.link_lost(id_);
    }
}

void Link::tx_loop()
{
    while (auto item = tx_queue_.pop()) {
        if (bp::bundle_age_ms(item->bundle)) {
            const DtnTimeMs now = host_.clock().now();
            const std::uint64_t residence = now > item->received_at ? now - item->received_at : 0;
            bp::set_bundle_age_ms(item->bundle, *bp::bundle_age_ms(item->bundle) + residence);
            item->received_at = now;
        }
        const Bytes wire = bp::encode_bundle(item->bundle);
        if (max_bundle_size_ != 0 && wire.size() > max_bundle_size_) {
            host_.transmission_failed(id_, std::move(*item), "bundle exceeds CLA maximum size");
            continue;
        }
        const SendResult result = transport_->send({wire, item->bundle, item->received_at});
        switch (result.status) {
        case SendResult::Status::Ok:
            ++sent_;
            break;
        case SendResult::Status::Rejected:
            host_.transmission_failed(id_, std::move(*item), result.reason);
            break;
        case SendResult::Status::LinkBroken: {
            {
                std::lock_guard lock(unsent_mutex_);
                unsent_.push_back(std::move(*item));
            }
            if (state_.load() == LinkState::Active) {
                log::info("cla", "link ", address_.to_text(), " lost (send side): ", result.reason);
                host_.link_lost(id_);
            }
            return;
        }
        }
    }
}

} // namespace bpmux::cla
