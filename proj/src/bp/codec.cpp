#include "bpmux/bp/codec.hpp"

#include <algorithm>
#include <string>

#include "bpmux/bp/cbor.hpp"

namespace bpmux::bp {

namespace {

constexpr std::uint64_t kBpv7 = 7;

[[noreturn]] void malformed(const std::string& why)
{
    throw BundleError(BundleError::Kind::MalformedBundle, why);
}

CrcType crc_type_from(std::uint64_t code)
{
    if (code > static_cast<std::uint64_t>(CrcType::Crc32C))
        malformed("unknown CRC type " + std::to_string(code));
    return static_cast<CrcType>(code);
}

// Appends the CRC placeholder, then patches in the CRC computed over
// [block_start, end) with the placeholder still zero-filled.
void finish_crc(cbor::Writer& w, std::size_t block_start, CrcType type)
{
    if (type == CrcType::None)
        return;
    const Bytes zeros(crc_size(type), 0);
    w.bytes(zeros);
    Bytes& buf = w.buffer();
    const std::span<const std::uint8_t> block(buf.data() + block_start, buf.size() - block_start);
    const Bytes crc = compute_crc(type, block);
    std::copy(crc.begin(), crc.end(), buf.end() - static_cast<std::ptrdiff_t>(crc.size()));
}

void encode_primary(cbor::Writer& w, const Bundle& b)
{
    const std::size_t start = w.size();
    const bool fragment = b.is_fragment();
    const std::size_t items = 8 + (fragment ? 2 : 0) + (b.crc_type != CrcType::None ? 1 : 0);
    w.array(items).uint(kBpv7).uint(b.proc_flags).uint(static_cast<std::uint64_t>(b.crc_type));
    b.destination.encode(w);
    b.source.encode(w);
    b.report_to.encode(w);
    w.array(2).uint(b.creation.dtn_time_ms).uint(b.creation.sequence_number);
    w.uint(b.lifetime_ms);
    if (fragment)
        w.uint(b.fragment_offset).uint(b.total_adu_length);
    finish_crc(w, start, b.crc_type);
}

void encode_canonical(cbor::Writer& w, const CanonicalBlock& block)
{
    const std::size_t start = w.size();
    w.array(block.crc_type != CrcType::None ? 6 : 5)
        .uint(block.block_type)
        .uint(block.block_number)
        .uint(block.flags)
        .uint(static_cast<std::uint64_t>(block.crc_type))
        .bytes(block.data);
    finish_crc(w, start, block.crc_type);
}

// Reads the trailing CRC item of the block that began at `block_start` and
// checks it against a recomputation with the CRC octets zeroed.
void verify_crc(cbor::Reader& r, std::size_t block_start, CrcType type, std::uint64_t block_number)
{
    const auto value = r.read_bytes();
    if (value.size() != crc_size(type))
        malformed("CRC field of block " + std::to_string(block_number) + " has wrong length");
    const auto raw = r.slice_from(block_start);
    Bytes copy(raw.begin(), raw.end());
    std::fill(copy.end() - static_cast<std::ptrdiff_t>(value.size()), copy.end(), 0);
    const Bytes expected = compute_crc(type, copy);
    if (!std::equal(expected.begin(), expected.end(), value.begin(), value.end()))
        throw BundleError(BundleError::Kind::CrcMismatch,
                          "CRC mismatch in block " + std::to_string(block_number), block_number);
}

void decode_primary(cbor::Reader& r, Bundle& b)
{
    const std::size_t start = r.position();
    const auto items = r.read_array();
    if (!items || *items < 8 || *items > 11)
        malformed("primary block must be a definite array of 8 to 11 items");
    if (r.read_uint() != kBpv7)
        malformed("primary block version is not 7");
    b.proc_flags = r.read_uint();
    b.crc_type = crc_type_from(r.read_uint());
    b.destination = EndpointId::decode(r);
    b.source = EndpointId::decode(r);
    b.report_to = EndpointId::decode(r);
    const auto ts = r.read_array();
    if (!ts || *ts != 2)
        malformed("creation timestamp must be a 2-element array");
    b.creation.dtn_time_ms = r.read_uint();
    b.creation.sequence_number = r.read_uint();
    b.lifetime_ms = r.read_uint();

    const std::size_t expected = 8 + (b.is_fragment() ? 2 : 0) + (b.crc_type != CrcType::None ? 1 : 0);
    if (*items != expected)
        malformed("primary block item count does not match its flags and CRC type");
    if (b.is_fragment()) {
        b.fragment_offset = r.read_uint();
        b.total_adu_length = r.read_uint();
    }
    if (b.crc_type != CrcType::None)
        verify_crc(r, start, b.crc_type, 0);
}

CanonicalBlock decode_canonical(cbor::Reader& r)
{
    const std::size_t start = r.position();
    const auto items = r.read_array();
    if (!items || (*items != 5 && *items != 6))
        malformed("canonical block must be a definite array of 5 or 6 items");
    CanonicalBlock block;
    block.block_type = r.read_uint();
    block.block_number = r.read_uint();
    block.flags = r.read_uint();
    block.crc_type = crc_type_from(r.read_uint());
    const auto data = r.read_bytes();
    block.data.assign(data.begin(), data.end());
    if ((*items == 6) != (block.crc_type != CrcType::None))
        malformed("canonical block item count does not match its CRC type");
    if (block.crc_type != CrcType::None)
        verify_crc(r, start, block.crc_type, block.block_number);
    return block;
}

} // namespace

BundleVersion detect_version(std::uint8_t first_byte)
{
    if (first_byte == 0x06)
        return BundleVersion::V6;
    if (first_byte == cbor::kIndefiniteArray || (first_byte >= 0x84 && first_byte <= 0x8B))
        return BundleVersion::V7;
    throw BundleError(BundleError::Kind::UnsupportedVersion,
                      "unsupported bundle version byte " + std::to_string(first_byte), first_byte);
}

Bytes encode_bundle(const Bundle& bundle)
{
    if (bundle.version != BundleVersion::V7)
        throw BundleError(BundleError::Kind::UnsupportedVersion, "only BPv7 bundles can be serialized",
                          static_cast<std::uint64_t>(bundle.version));
    validate(bundle);
    cbor::Writer w;
    w.buffer().reserve(encoded_size(bundle));
    w.begin_indefinite_array();
    encode_primary(w, bundle);
    for (const auto& block : bundle.blocks)
        encode_canonical(w, block);
    w.end_indefinite();
    return std::move(w).take();
}

std::size_t encoded_size(const Bundle& bundle)
{
    cbor::Writer w;
    w.begin_indefinite_array();
    encode_primary(w, bundle);
    std::size_t payload_len = 0;
    for (const auto& block : bundle.blocks) {
        if (&block == &bundle.payload_block()) {
            const CanonicalBlock empty{block.block_type, block.block_number, block.flags, block.crc_type, {}};
            payload_len = block.data.size();
            encode_canonical(w, empty);
        } else {
            encode_canonical(w, block);
        }
    }
    w.end_indefinite();
    return w.size() - cbor::header_size(0) + cbor::header_size(payload_len) + payload_len;
}

Bundle decode_bundle(std::span<const std::uint8_t> data)
{
    if (data.empty())
        throw BundleError(BundleError::Kind::TruncatedInput, "empty input");
    const BundleVersion version = detect_version(data[0]);
    if (version == BundleVersion::V6)
        throw BundleError(BundleError::Kind::UnsupportedVersion, "BPv6 bundles are not supported", 6);

    try {
        cbor::Reader r(data);
        const auto outer = r.read_array();
        if (outer && *outer < 2)
            malformed("bundle array needs a primary and a payload block");
        Bundle b;
        b.version = BundleVersion::V7;
        decode_primary(r, b);
        b.blocks.clear();
        if (outer) {
            for (std::size_t i = 1; i < *outer; ++i)
                b.blocks.push_back(decode_canonical(r));
        } else {
            while (!r.at_break())
                b.blocks.push_back(decode_canonical(r));
            r.read_break();
        }
        if (!r.at_end())
            malformed("trailing octets after bundle");
        validate(b);
        return b;
    } catch (const cbor::Error& e) {
        if (e.kind() == cbor::Error::Kind::Truncated)
            throw BundleError(BundleError::Kind::TruncatedInput, e.what());
        throw BundleError(BundleError::Kind::MalformedBundle, e.what());
    }
}

} // namespace bpmux::bp
