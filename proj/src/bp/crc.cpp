#include "bpmux/bp/crc.hpp"

#include <array>

namespace bpmux::bp {

namespace {

constexpr std::uint16_t kCrc16ReflectedPoly = 0x8408;
constexpr std::uint32_t kCrc32cReflectedPoly = 0x82F63B78;

template <typename T, T Poly>
constexpr std::array<T, 256> make_table()
{
    std::array<T, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        T crc = static_cast<T>(i);
        for (int bit = 0; bit < 8; ++bit)
            crc = (crc & 1) ? static_cast<T>((crc >> 1) ^ Poly) : static_cast<T>(crc >> 1);
        table[i] = crc;
    }
    return table;
}

constexpr auto kCrc16Table = make_table<std::uint16_t, kCrc16ReflectedPoly>();
constexpr auto kCrc32cTable = make_table<std::uint32_t, kCrc32cReflectedPoly>();

} // namespace

std::uint16_t crc16_x25(std::span<const std::uint8_t> data)
{
    std::uint16_t crc = 0xFFFF;
    for (std::uint8_t b : data)
        crc = static_cast<std::uint16_t>((crc >> 8) ^ kCrc16Table[(crc ^ b) & 0xFF]);
    return static_cast<std::uint16_t>(crc ^ 0xFFFF);
}

std::uint32_t crc32c(std::span<const std::uint8_t> data)
{
    std::uint32_t crc = 0xFFFFFFFF;
    for (std::uint8_t b : data)
        crc = (crc >> 8) ^ kCrc32cTable[(crc ^ b) & 0xFF];
    return crc ^ 0xFFFFFFFF;
}

std::size_t crc_size(CrcType type)
{
    switch (type) {
    case CrcType::None: return 0;
    case CrcType::Crc16X25: return 2;
    case CrcType::Crc32C: return 4;
    }
    return 0;
}

std::vector<std::uint8_t> compute_crc(CrcType type, std::span<const std::uint8_t> data)
{
    switch (type) {
    case CrcType::None:
        return {};
    case CrcType::Crc16X25: {
        const std::uint16_t v = crc16_x25(data);
        return {static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
    }
    case CrcType::Crc32C: {
        const std::uint32_t v = crc32c(data);
        return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
                static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
    }
    }
    return {};
}

} // namespace bpmux::bp
