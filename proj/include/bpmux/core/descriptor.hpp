#pragma once

#include <cstdint>
#include <string>

#include "bpmux/bp/bundle.hpp"
#include "bpmux/common/clock.hpp"

namespace bpmux::core {

enum class DropReason : std::uint8_t {
    Expired,
    HopLimitExceeded,
    NoSuchEndpoint,
    NoRoute,
    DispatcherDrop,
    StorageFull,
};

inline constexpr std::size_t kDropReasonCount = 6;

inline const char* to_string(DropReason reason)
{
    switch (reason) {
    case DropReason::Expired: return "Expired";
    case DropReason::HopLimitExceeded: return "HopLimitExceeded";
    case DropReason::NoSuchEndpoint: return "NoSuchEndpoint";
    case DropReason::NoRoute: return "NoRoute";
    case DropReason::DispatcherDrop: return "DispatcherDrop";
    case DropReason::StorageFull: return "StorageFull";
    }
    return "?";
}

enum class Origin : std::uint8_t { Cla, Agent, Storage };

/// A bundle while it is owned by the bundle processor.
struct BundleDescriptor {
    bp::Bundle bundle;
    Origin origin = Origin::Cla;
    /// CLA address text, connection id, or storage id depending on origin.
    std::string origin_detail;
    DtnTimeMs received_at = 0;
    /// Set once the bundle went back through dispatch after its first
    /// decision could not be carried out.
    bool redispatched = false;
};

} // namespace bpmux::core
