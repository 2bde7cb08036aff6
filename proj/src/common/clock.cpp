#include "bpmux/common/clock.hpp"

#include <chrono>

namespace bpmux {

DtnTimeMs unix_ms_to_dtn(std::uint64_t unix_ms)
{
    const std::uint64_t offset = kDtnEpochUnixSeconds * 1000;
    return unix_ms > offset ? unix_ms - offset : 0;
}

DtnTimeMs RealClock::now() const
{
    const auto since_epoch = std::chrono::system_clock::now().time_since_epoch();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(since_epoch).count();
    return unix_ms_to_dtn(static_cast<std::uint64_t>(ms));
}

} // namespace bpmux
