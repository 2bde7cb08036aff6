#pragma once

#include <atomic>
#include <cstdint>

namespace bpmux {

/// Milliseconds since 2000-01-01T00:00:00 UTC, leap seconds ignored.
using DtnTimeMs = std::uint64_t;

/// Offset between the Unix epoch and the DTN epoch, in seconds.
inline constexpr std::uint64_t kDtnEpochUnixSeconds = 946'684'800;

class Clock {
public:
    virtual ~Clock() = default;
    virtual DtnTimeMs now() const = 0;
};

class RealClock final : public Clock {
public:
    DtnTimeMs now() const override;
};

/// Manually advanced clock shared by every node of a simulated run.
class SimClock final : public Clock {
public:
    explicit SimClock(DtnTimeMs start = 0) : now_(start) {}

    DtnTimeMs now() const override { return now_.load(); }
    void advance(DtnTimeMs delta) { now_.fetch_add(delta); }
    void set(DtnTimeMs t) { now_.store(t); }

private:
    std::atomic<DtnTimeMs> now_;
};

DtnTimeMs unix_ms_to_dtn(std::uint64_t unix_ms);

} // namespace bpmux
