#pragma once

#include <cstdint>
#include <span>

#include "bpmux/bp/bundle.hpp"

namespace bpmux::bp {

/// Identifies the protocol version from the first octet of a serialized
/// bundle: 0x06 is BPv6, a CBOR array head (0x9F or 0x84..0x8B) is BPv7.
/// Throws BundleError(UnsupportedVersion) otherwise.
BundleVersion detect_version(std::uint8_t first_byte);

/// Serializes a V7 bundle. The outer array is always indefinite-length,
/// inner items use the shortest encoding, and block CRCs are filled in.
Bytes encode_bundle(const Bundle& bundle);

/// Parses and validates a serialized bundle, verifying all CRCs.
/// V6 input is detected and rejected with UnsupportedVersion.
Bundle decode_bundle(std::span<const std::uint8_t> data);

/// Encoded size without serializing the payload twice.
std::size_t encoded_size(const Bundle& bundle);

} // namespace bpmux::bp
