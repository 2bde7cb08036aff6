#include "bpmux/bp/cbor.hpp"

namespace bpmux::cbor {

namespace {
constexpr int kMaxSkipDepth = 32;

[[noreturn]] void truncated() { throw Error(Error::Kind::Truncated, "truncated CBOR input"); }
[[noreturn]] void malformed(const std::string& why) { throw Error(Error::Kind::Malformed, why); }
} // namespace

std::size_t header_size(std::uint64_t value)
{
    if (value < 24)
        return 1;
    if (value <= 0xFF)
        return 2;
    if (value <= 0xFFFF)
        return 3;
    if (value <= 0xFFFFFFFFull)
        return 5;
    return 9;
}

void Writer::head(MajorType type, std::uint64_t value)
{
    const auto mt = static_cast<std::uint8_t>(static_cast<std::uint8_t>(type) << 5);
    if (value < 24) {
        out_.push_back(mt | static_cast<std::uint8_t>(value));
        return;
    }
    int width;
    std::uint8_t info;
    if (value <= 0xFF) {
        width = 1;
        info = 24;
    } else if (value <= 0xFFFF) {
        width = 2;
        info = 25;
    } else if (value <= 0xFFFFFFFFull) {
        width = 4;
        info = 26;
    } else {
        width = 8;
        info = 27;
    }
    out_.push_back(mt | info);
    for (int i = width - 1; i >= 0; --i)
        out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

Writer& Writer::uint(std::uint64_t value)
{
    head(MajorType::Unsigned, value);
    return *this;
}

Writer& Writer::bytes(std::span<const std::uint8_t> data)
{
    head(MajorType::ByteString, data.size());
    out_.insert(out_.end(), data.begin(), data.end());
    return *this;
}

Writer& Writer::text(std::string_view s)
{
    head(MajorType::TextString, s.size());
    out_.insert(out_.end(), s.begin(), s.end());
    return *this;
}

Writer& Writer::boolean(bool b)
{
    out_.push_back(b ? kTrue : kFalse);
    return *this;
}

Writer& Writer::array(std::size_t count)
{
    head(MajorType::Array, count);
    return *this;
}

Writer& Writer::map(std::size_t count)
{
    head(MajorType::Map, count);
    return *this;
}

Writer& Writer::begin_indefinite_array()
{
    out_.push_back(kIndefiniteArray);
    return *this;
}

Writer& Writer::end_indefinite()
{
    out_.push_back(kBreak);
    return *this;
}

Writer& Writer::raw(std::span<const std::uint8_t> data)
{
    out_.insert(out_.end(), data.begin(), data.end());
    return *this;
}

std::uint8_t Reader::next_byte()
{
    if (pos_ >= data_.size())
        truncated();
    return data_[pos_++];
}

MajorType Reader::peek_type() const
{
    if (pos_ >= data_.size())
        truncated();
    return static_cast<MajorType>(data_[pos_] >> 5);
}

bool Reader::at_break() const
{
    if (pos_ >= data_.size())
        truncated();
    return data_[pos_] == kBreak;
}

std::uint64_t Reader::read_argument(std::uint8_t info)
{
    if (info < 24)
        return info;
    int width;
    switch (info) {
    case 24: width = 1; break;
    case 25: width = 2; break;
    case 26: width = 4; break;
    case 27: width = 8; break;
    default: malformed("unsupported CBOR additional information " + std::to_string(info));
    }
    std::uint64_t value = 0;
    for (int i = 0; i < width; ++i)
        value = (value << 8) | next_byte();
    return value;
}

std::uint64_t Reader::read_head(MajorType expected)
{
    const std::uint8_t initial = next_byte();
    const auto type = static_cast<MajorType>(initial >> 5);
    if (type != expected) {
        --pos_;
        malformed("unexpected CBOR major type " + std::to_string(static_cast<int>(type)) +
                  ", wanted " + std::to_string(static_cast<int>(expected)));
    }
    return read_argument(initial & 0x1F);
}

std::uint64_t Reader::read_uint() { return read_head(MajorType::Unsigned); }

std::span<const std::uint8_t> Reader::read_bytes()
{
    const std::uint64_t len = read_head(MajorType::ByteString);
    if (len > remaining())
        truncated();
    auto out = data_.subspan(pos_, static_cast<std::size_t>(len));
    pos_ += static_cast<std::size_t>(len);
    return out;
}

std::string Reader::read_text()
{
    const std::uint64_t len = read_head(MajorType::TextString);
    if (len > remaining())
        truncated();
    std::string out(reinterpret_cast<const char*>(data_.data() + pos_), static_cast<std::size_t>(len));
    pos_ += static_cast<std::size_t>(len);
    return out;
}

bool Reader::read_bool()
{
    const std::uint8_t b = next_byte();
    if (b == kTrue)
        return true;
    if (b == kFalse)
        return false;
    --pos_;
    malformed("expected CBOR boolean");
}

std::optional<std::size_t> Reader::read_array()
{
    if (pos_ < data_.size() && data_[pos_] == kIndefiniteArray) {
        ++pos_;
        return std::nullopt;
    }
    const std::uint64_t n = read_head(MajorType::Array);
    // Every element needs at least one octet.
    if (n > remaining())
        truncated();
    return static_cast<std::size_t>(n);
}

std::size_t Reader::read_map()
{
    const std::uint64_t n = read_head(MajorType::Map);
    if (n > remaining())
        truncated();
    return static_cast<std::size_t>(n);
}

void Reader::read_break()
{
    if (next_byte() != kBreak) {
        --pos_;
        malformed("expected CBOR break");
    }
}

void Reader::skip() { skip_depth(0); }

void Reader::skip_depth(int depth)
{
    if (depth > kMaxSkipDepth)
        malformed("CBOR nesting too deep");
    const std::uint8_t initial = next_byte();
    const auto type = static_cast<MajorType>(initial >> 5);
    const std::uint8_t info = initial & 0x1F;
    if (info == 31) {
        if (type != MajorType::Array && type != MajorType::Map)
            malformed("unsupported indefinite-length item");
        while (!at_break()) {
            skip_depth(depth + 1);
            if (type == MajorType::Map)
                skip_depth(depth + 1);
        }
        read_break();
        return;
    }
    const std::uint64_t arg = (type == MajorType::Simple) ? 0 : read_argument(info);
    switch (type) {
    case MajorType::Unsigned:
    case MajorType::Negative:
        return;
    case MajorType::ByteString:
    case MajorType::TextString:
        if (arg > remaining())
            truncated();
        pos_ += static_cast<std::size_t>(arg);
        return;
    case MajorType::Array:
        for (std::uint64_t i = 0; i < arg; ++i)
            skip_depth(depth + 1);
        return;
    case MajorType::Map:
        for (std::uint64_t i = 0; i < arg; ++i) {
            skip_depth(depth + 1);
            skip_depth(depth + 1);
        }
        return;
    case MajorType::Tag:
        skip_depth(depth + 1);
        return;
    case MajorType::Simple:
        if (info < 24)
            return;
        if (info == 24) {
            next_byte();
            return;
        }
        malformed("floating point CBOR items are not supported");
    }
}

} // namespace bpmux::cbor
