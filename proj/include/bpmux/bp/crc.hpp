#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace bpmux::bp {

enum class CrcType : std::uint8_t { None = 0, Crc16X25 = 1, Crc32C = 2 };

/// CRC-16/X.25: poly 0x1021 reflected, init 0xFFFF, xorout 0xFFFF.
std::uint16_t crc16_x25(std::span<const std::uint8_t> data);

/// CRC-32C (Castagnoli): reflected, init and xorout 0xFFFFFFFF.
std::uint32_t crc32c(std::span<const std::uint8_t> data);

/// Number of CRC octets carried for `type` (0, 2 or 4).
std::size_t crc_size(CrcType type);

/// CRC value of `data` as a big-endian octet string; empty for CrcType::None.
std::vector<std::uint8_t> compute_crc(CrcType type, std::span<const std::uint8_t> data);

} // namespace bpmux::bp
