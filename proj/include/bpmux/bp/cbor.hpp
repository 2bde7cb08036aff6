#pragma once

// The subset of CBOR (RFC 8949) that bundles and the control protocol need:
// unsigned integers, byte and text strings, arrays, maps, booleans and the
// indefinite-length array used for the bundle envelope. No floats, no tags.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bpmux::cbor {

using Bytes = std::vector<std::uint8_t>;

enum class MajorType : std::uint8_t {
    Unsigned = 0,
    Negative = 1,
    ByteString = 2,
    TextString = 3,
    Array = 4,
    Map = 5,
    Tag = 6,
    Simple = 7,
};

inline constexpr std::uint8_t kBreak = 0xFF;
inline constexpr std::uint8_t kIndefiniteArray = 0x9F;
inline constexpr std::uint8_t kFalse = 0xF4;
inline constexpr std::uint8_t kTrue = 0xF5;

class Error : public std::runtime_error {
public:
    enum class Kind { Truncated, Malformed };

    Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Number of octets the shortest header for `value` occupies.
std::size_t header_size(std::uint64_t value);

class Writer {
public:
    Writer& uint(std::uint64_t value);
    Writer& bytes(std::span<const std::uint8_t> data);
    Writer& text(std::string_view s);
    Writer& boolean(bool b);
    Writer& array(std::size_t count);
    Writer& map(std::size_t count);
    Writer& begin_indefinite_array();
    Writer& end_indefinite();
    Writer& raw(std::span<const std::uint8_t> data);

    const Bytes& data() const& { return out_; }
    Bytes take() && { return std::move(out_); }
    std::size_t size() const { return out_.size(); }
    Bytes& buffer() { return out_; }

private:
    void head(MajorType type, std::uint64_t value);

    Bytes out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

    MajorType peek_type() const;
    bool at_break() const;
    bool at_end() const { return pos_ >= data_.size(); }
    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

    std::uint64_t read_uint();
    std::span<const std::uint8_t> read_bytes();
    std::string read_text();
    bool read_bool();
    /// nullopt for an indefinite-length array.
    std::optional<std::size_t> read_array();
    std::size_t read_map();
    void read_break();
    /// Skips one complete data item of any supported kind.
    void skip();

    /// Bytes spanning [from, position()).
    std::span<const std::uint8_t> slice_from(std::size_t from) const
    {
        return data_.subspan(from, pos_ - from);
    }

private:
    std::uint8_t next_byte();
    std::uint64_t read_argument(std::uint8_t info);
    std::uint64_t read_head(MajorType expected);
    void skip_depth(int depth);

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

} // namespace bpmux::cbor
