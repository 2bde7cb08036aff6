#pragma once

// Bundle-in-bundle encapsulation as a CLA. Sending on "bibe:<outer-eid>"
// wraps the bundle into an administrative record [0, 0, inner] addressed to
// <outer-eid> and hands the outer bundle back to the bundle processor.
// Outer bundles delivered to the local BIBE endpoint are unwrapped and the
// inner bundle is received as if it came in over a link. Custody transfer
// is not supported: both custody fields must be zero.

#include <atomic>
#include <cstdint>
#include <span>
#include <stdexcept>

#include "bpmux/bp/bundle.hpp"
#include "bpmux/cla/cla.hpp"

namespace bpmux::bibe {

using Bytes = std::vector<std::uint8_t>;

class BibeError : public std::runtime_error {
public:
    enum class Kind { MalformedBpdu, InnerDecodeFailed, InnerTooLarge };

    BibeError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

struct BibePdu {
    std::uint64_t transmission_id = 0;
    std::uint64_t retransmission_time = 0;
    Bytes encapsulated;

    friend bool operator==(const BibePdu&, const BibePdu&) = default;
};

Bytes encode_bpdu(const BibePdu& pdu);
/// Throws BibeError(MalformedBpdu).
BibePdu decode_bpdu(std::span<const std::uint8_t> payload);

struct OuterParams {
    bp::EndpointId destination;
    bp::EndpointId source;
    bp::CreationTimestamp creation;
    std::uint64_t lifetime_ms = 0;
    /// Inner bundle's remaining lifetime caps the outer lifetime.
    std::uint64_t inner_remaining_ms = UINT64_MAX;
    /// 0 means unlimited. Throws BibeError(InnerTooLarge) when exceeded.
    std::size_t max_outer_size = 0;
    bp::CrcType crc = bp::CrcType::Crc16X25;
};

bp::Bundle encapsulate(const bp::Bundle& inner, const OuterParams& params);
/// Throws BibeError(MalformedBpdu | InnerDecodeFailed).
bp::Bundle decapsulate(const bp::Bundle& outer);

class BibeCla final : public cla::Cla {
public:
    struct Options {
        std::string endpoint = "bibe";
        std::uint64_t outer_lifetime_ms = 24ull * 3600 * 1000;
        std::size_t max_outer_size = 0;
    };

    explicit BibeCla(Options options) : options_(std::move(options)) {}

    std::string name() const override { return "bibe"; }
    std::size_t max_bundle_size() const override { return 0; }
    void start(cla::ClaHost& host) override;
    void stop() override {}
    /// `detail` is the outer destination EID.
    std::unique_ptr<cla::LinkTransport> open(const std::string& detail) override;

    const Options& options() const { return options_; }
    cla::ClaHost& host() { return *host_; }
    std::uint64_t next_sequence() { return seq_++; }

private:
    void on_outer(const bp::Bundle& outer);

    Options options_;
    cla::ClaHost* host_ = nullptr;
    std::atomic<std::uint64_t> seq_{0};
};

} // namespace bpmux::bibe
