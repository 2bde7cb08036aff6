#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bpmux/bp/crc.hpp"
#include "bpmux/bp/eid.hpp"
#include "bpmux/common/clock.hpp"

namespace bpmux::bp {

using Bytes = std::vector<std::uint8_t>;

enum class BundleVersion : std::uint8_t { V6 = 6, V7 = 7 };

namespace bundle_flags {
inline constexpr std::uint64_t kIsFragment = 0x01;
inline constexpr std::uint64_t kAdminRecord = 0x02;
inline constexpr std::uint64_t kMustNotFragment = 0x04;
inline constexpr std::uint64_t kAckRequested = 0x20;
} // namespace bundle_flags

namespace block_flags {
inline constexpr std::uint64_t kReplicateInFragments = 0x01;
inline constexpr std::uint64_t kReportOnFail = 0x02;
inline constexpr std::uint64_t kDeleteBundleOnFail = 0x04;
inline constexpr std::uint64_t kDiscardBlockOnFail = 0x10;
} // namespace block_flags

namespace block_types {
inline constexpr std::uint64_t kPayload = 1;
inline constexpr std::uint64_t kPreviousNode = 6;
inline constexpr std::uint64_t kBundleAge = 7;
inline constexpr std::uint64_t kHopCount = 10;
} // namespace block_types

inline constexpr std::uint64_t kPayloadBlockNumber = 1;

struct CreationTimestamp {
    DtnTimeMs dtn_time_ms = 0;
    std::uint64_t sequence_number = 0;

    friend auto operator<=>(const CreationTimestamp&, const CreationTimestamp&) = default;
};

struct CanonicalBlock {
    std::uint64_t block_type = block_types::kPayload;
    std::uint64_t block_number = kPayloadBlockNumber;
    std::uint64_t flags = 0;
    CrcType crc_type = CrcType::None;
    Bytes data;

    friend bool operator==(const CanonicalBlock&, const CanonicalBlock&) = default;
};

struct HopCount {
    std::uint64_t limit = 0;
    std::uint64_t count = 0;

    friend bool operator==(const HopCount&, const HopCount&) = default;
};

/// Errors raised by the bundle codec and the bundle-level algorithms.
class BundleError : public std::runtime_error {
public:
    enum class Kind {
        UnsupportedVersion,
        MalformedBundle,
        CrcMismatch,
        TruncatedInput,
        MustNotFragment,
        IncompleteAdu,
        InconsistentFragments,
        MissingBundleAge,
    };

    BundleError(Kind kind, const std::string& what, std::uint64_t detail = 0)
        : std::runtime_error(what), kind_(kind), detail_(detail)
    {
    }

    Kind kind() const noexcept { return kind_; }
    /// Version byte for UnsupportedVersion, block number for CrcMismatch.
    std::uint64_t detail() const noexcept { return detail_; }

private:
    Kind kind_;
    std::uint64_t detail_;
};

const char* to_string(BundleError::Kind kind);

/// In-memory bundle, shared by every protocol version the node understands.
/// `blocks` holds the extension blocks followed by the payload block.
struct Bundle {
    BundleVersion version = BundleVersion::V7;
    std::uint64_t proc_flags = 0;
    CrcType crc_type = CrcType::None;
    EndpointId destination;
    EndpointId source;
    EndpointId report_to;
    CreationTimestamp creation;
    std::uint64_t lifetime_ms = 0;
    std::uint64_t fragment_offset = 0;
    std::uint64_t total_adu_length = 0;
    std::vector<CanonicalBlock> blocks{CanonicalBlock{}};

    bool is_fragment() const { return (proc_flags & bundle_flags::kIsFragment) != 0; }
    bool is_admin_record() const { return (proc_flags & bundle_flags::kAdminRecord) != 0; }
    bool must_not_fragment() const { return (proc_flags & bundle_flags::kMustNotFragment) != 0; }

    CanonicalBlock& payload_block() { return blocks.back(); }
    const CanonicalBlock& payload_block() const { return blocks.back(); }
    Bytes& payload() { return blocks.back().data; }
    const Bytes& payload() const { return blocks.back().data; }

    CanonicalBlock* find_block(std::uint64_t block_type);
    const CanonicalBlock* find_block(std::uint64_t block_type) const;

    /// Adds an extension block ahead of the payload with the next free number.
    CanonicalBlock& add_extension_block(std::uint64_t block_type, Bytes data, std::uint64_t flags = 0);

    friend bool operator==(const Bundle&, const Bundle&) = default;
};

/// Builds a V7 bundle as created by a local agent, every block carrying `crc`.
Bundle make_bundle(const EndpointId& destination, const EndpointId& source,
                   CreationTimestamp creation, std::uint64_t lifetime_ms, Bytes payload,
                   CrcType crc = CrcType::Crc16X25);

/// Throws BundleError(MalformedBundle) if the structural invariants do not hold.
void validate(const Bundle& bundle);

std::optional<HopCount> hop_count(const Bundle& bundle);
void set_hop_count(Bundle& bundle, HopCount hc);

std::optional<std::uint64_t> bundle_age_ms(const Bundle& bundle);
void set_bundle_age_ms(Bundle& bundle, std::uint64_t age_ms);

/// Absolute expiry time. With a creation clock value it is creation + lifetime;
/// without one it is received_at + (lifetime - age), floored at received_at.
DtnTimeMs expiry_time(const Bundle& bundle, DtnTimeMs received_at);

/// Remaining lifetime at `now`, zero once expired.
std::uint64_t remaining_lifetime(const Bundle& bundle, DtnTimeMs received_at, DtnTimeMs now);

} // namespace bpmux::bp
