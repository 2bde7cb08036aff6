#include "bpmux/bp/bundle.hpp"

#include <algorithm>
#include <set>

namespace bpmux::bp {

const char* to_string(BundleError::Kind kind)
{
    switch (kind) {
    case BundleError::Kind::UnsupportedVersion: return "UnsupportedVersion";
    case BundleError::Kind::MalformedBundle: return "MalformedBundle";
    case BundleError::Kind::CrcMismatch: return "CrcMismatch";
    case BundleError::Kind::TruncatedInput: return "TruncatedInput";
    case BundleError::Kind::MustNotFragment: return "MustNotFragment";
    case BundleError::Kind::IncompleteAdu: return "IncompleteAdu";
    case BundleError::Kind::InconsistentFragments: return "InconsistentFragments";
    case BundleError::Kind::MissingBundleAge: return "MissingBundleAge";
    }
    return "?";
}

CanonicalBlock* Bundle::find_block(std::uint64_t block_type)
{
    auto it = std::find_if(blocks.begin(), blocks.end(),
                           [&](const CanonicalBlock& b) { return b.block_type == block_type; });
    return it == blocks.end() ? nullptr : &*it;
}

const CanonicalBlock* Bundle::find_block(std::uint64_t block_type) const
{
    return const_cast<Bundle*>(this)->find_block(block_type);
}

CanonicalBlock& Bundle::add_extension_block(std::uint64_t block_type, Bytes data, std::uint64_t flags)
{
    std::uint64_t number = kPayloadBlockNumber + 1;
    for (const auto& b : blocks)
        number = std::max(number, b.block_number + 1);
    CanonicalBlock block;
    block.block_type = block_type;
    block.block_number = number;
    block.flags = flags;
    block.crc_type = payload_block().crc_type;
    block.data = std::move(data);
    auto it = blocks.insert(blocks.end() - 1, std::move(block));
    return *it;
}

Bundle make_bundle(const EndpointId& destination, const EndpointId& source, CreationTimestamp creation,
                   std::uint64_t lifetime_ms, Bytes payload, CrcType crc)
{
    Bundle b;
    b.crc_type = crc;
    b.destination = destination;
    b.source = source;
    b.report_to = source;
    b.creation = creation;
    b.lifetime_ms = lifetime_ms;
    b.payload_block().crc_type = crc;
    b.payload() = std::move(payload);
    return b;
}

void validate(const Bundle& bundle)
{
    auto fail = [](const std::string& why) {
        throw BundleError(BundleError::Kind::MalformedBundle, why);
    };
    if (bundle.blocks.empty())
        fail("bundle has no payload block");
    std::set<std::uint64_t> numbers;
    for (std::size_t i = 0; i < bundle.blocks.size(); ++i) {
        const auto& block = bundle.blocks[i];
        const bool last = i + 1 == bundle.blocks.size();
        if (block.block_type == block_types::kPayload && !last)
            fail("payload block must be the last block");
        if (last && block.block_type != block_types::kPayload)
            fail("last block is not the payload block");
        if (block.block_number == 0)
            fail("block number 0 is reserved for the primary block");
        if (!numbers.insert(block.block_number).second)
            fail("duplicate block number " + std::to_string(block.block_number));
    }
    if (bundle.payload_block().block_number != kPayloadBlockNumber)
        fail("payload block must have block number 1");
    if (bundle.is_fragment()) {
        if (bundle.fragment_offset + bundle.payload().size() > bundle.total_adu_length)
            fail("fragment exceeds total ADU length");
    } else if (bundle.fragment_offset != 0 || bundle.total_adu_length != 0) {
        fail("fragment fields set on a non-fragment");
    }
}

std::optional<HopCount> hop_count(const Bundle& bundle)
{
    const CanonicalBlock* block = bundle.find_block(block_types::kHopCount);
    if (!block)
        return std::nullopt;
    try {
        cbor::Reader r(block->data);
        const auto n = r.read_array();
        if (!n || *n != 2)
            throw BundleError(BundleError::Kind::MalformedBundle, "hop-count block is not a pair");
        HopCount hc;
        hc.limit = r.read_uint();
        hc.count = r.read_uint();
        return hc;
    } catch (const cbor::Error& e) {
        throw BundleError(BundleError::Kind::MalformedBundle, std::string("hop-count block: ") + e.what());
    }
}

void set_hop_count(Bundle& bundle, HopCount hc)
{
    cbor::Writer w;
    w.array(2).uint(hc.limit).uint(hc.count);
    if (CanonicalBlock* block = bundle.find_block(block_types::kHopCount))
        block->data = std::move(w).take();
    else
        bundle.add_extension_block(block_types::kHopCount, std::move(w).take());
}

std::optional<std::uint64_t> bundle_age_ms(const Bundle& bundle)
{
    const CanonicalBlock* block = bundle.find_block(block_types::kBundleAge);
    if (!block)
        return std::nullopt;
    try {
        cbor::Reader r(block->data);
        return r.read_uint();
    } catch (const cbor::Error& e) {
        throw BundleError(BundleError::Kind::MalformedBundle, std::string("bundle-age block: ") + e.what());
    }
}

void set_bundle_age_ms(Bundle& bundle, std::uint64_t age_ms)
{
    cbor::Writer w;
    w.uint(age_ms);
    if (CanonicalBlock* block = bundle.find_block(block_types::kBundleAge))
        block->data = std::move(w).take();
    else
        bundle.add_extension_block(block_types::kBundleAge, std::move(w).take());
}

DtnTimeMs expiry_time(const Bundle& bundle, DtnTimeMs received_at)
{
    if (bundle.creation.dtn_time_ms != 0)
        return bundle.creation.dtn_time_ms + bundle.lifetime_ms;
    const auto age = bundle_age_ms(bundle);
    if (!age)
        throw BundleError(BundleError::Kind::MissingBundleAge,
                          "bundle without creation clock lacks a bundle-age block");
    const std::uint64_t remaining = bundle.lifetime_ms > *age ? bundle.lifetime_ms - *age : 0;
    return received_at + remaining;
}

std::uint64_t remaining_lifetime(const Bundle& bundle, DtnTimeMs received_at, DtnTimeMs now)
{
    const DtnTimeMs expiry = expiry_time(bundle, received_at);
    return expiry > now ? expiry - now : 0;
}

} // namespace bpmux::bp
