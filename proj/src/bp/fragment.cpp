#include "bpmux/bp/fragment.hpp"

#include <algorithm>
#include <string>

namespace bpmux::bp {

namespace {

bool primary_fields_match(const Bundle& a, const Bundle& b)
{
    return a.version == b.version && a.proc_flags == b.proc_flags && a.crc_type == b.crc_type &&
           a.destination == b.destination && a.source == b.source && a.report_to == b.report_to &&
           a.creation == b.creation && a.lifetime_ms == b.lifetime_ms &&
           a.total_adu_length == b.total_adu_length;
}

} // namespace

std::vector<Bundle> fragment_bundle(const Bundle& bundle, std::uint64_t max_payload)
{
    if (max_payload == 0)
        throw std::invalid_argument("max_payload must be at least 1");
    if (bundle.must_not_fragment())
        throw BundleError(BundleError::Kind::MustNotFragment, "bundle is flagged must-not-fragment");
    if (bundle.is_admin_record())
        throw BundleError(BundleError::Kind::MustNotFragment, "administrative records are not fragmented");

    const Bytes& payload = bundle.payload();
    const std::uint64_t len = payload.size();
    const std::uint64_t count = (len + max_payload - 1) / max_payload;
    if (count <= 1)
        return {bundle};

    const std::uint64_t base_offset = bundle.is_fragment() ? bundle.fragment_offset : 0;
    const std::uint64_t total = bundle.is_fragment() ? bundle.total_adu_length : len;

    std::vector<Bundle> out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        Bundle frag;
        frag.version = bundle.version;
        frag.proc_flags = bundle.proc_flags | bundle_flags::kIsFragment;
        frag.crc_type = bundle.crc_type;
        frag.destination = bundle.destination;
        frag.source = bundle.source;
        frag.report_to = bundle.report_to;
        frag.creation = bundle.creation;
        frag.lifetime_ms = bundle.lifetime_ms;
        frag.fragment_offset = base_offset + i * max_payload;
        frag.total_adu_length = total;
        frag.blocks.clear();
        for (const auto& block : bundle.blocks) {
            if (&block == &bundle.payload_block())
                continue;
            if (i == 0 || (block.flags & block_flags::kReplicateInFragments))
                frag.blocks.push_back(block);
        }
        const CanonicalBlock& src = bundle.payload_block();
        CanonicalBlock piece{src.block_type, src.block_number, src.flags, src.crc_type, {}};
        const std::uint64_t begin = i * max_payload;
        const std::uint64_t end = std::min(len, begin + max_payload);
        piece.data.assign(payload.begin() + static_cast<std::ptrdiff_t>(begin),
                          payload.begin() + static_cast<std::ptrdiff_t>(end));
        frag.blocks.push_back(std::move(piece));
        out.push_back(std::move(frag));
    }
    return out;
}

bool same_adu(const Bundle& a, const Bundle& b)
{
    return a.is_fragment() && b.is_fragment() && a.source == b.source && a.creation == b.creation &&
           a.total_adu_length == b.total_adu_length;
}

std::vector<std::pair<std::uint64_t, std::uint64_t>> missing_ranges(std::span<const Bundle> fragments)
{
    std::vector<std::pair<std::uint64_t, std::uint64_t>> covered;
    std::uint64_t total = 0;
    for (const auto& f : fragments) {
        total = f.total_adu_length;
        covered.emplace_back(f.fragment_offset, f.fragment_offset + f.payload().size());
    }
    std::sort(covered.begin(), covered.end());
    std::vector<std::pair<std::uint64_t, std::uint64_t>> gaps;
    std::uint64_t cursor = 0;
    for (const auto& [begin, end] : covered) {
        if (begin > cursor)
            gaps.emplace_back(cursor, begin);
        cursor = std::max(cursor, end);
    }
    if (cursor < total)
        gaps.emplace_back(cursor, total);
    return gaps;
}

Bundle reassemble(std::span<const Bundle> fragments)
{
    if (fragments.empty())
        throw BundleError(BundleError::Kind::IncompleteAdu, "no fragments");
    for (const auto& f : fragments) {
        if (!f.is_fragment())
            throw BundleError(BundleError::Kind::InconsistentFragments, "input contains a non-fragment");
        if (!primary_fields_match(f, fragments.front()))
            throw BundleError(BundleError::Kind::InconsistentFragments, "fragments disagree on primary fields");
    }
    const auto gaps = missing_ranges(fragments);
    if (!gaps.empty()) {
        std::string what = "ADU incomplete, missing";
        for (const auto& [b, e] : gaps)
            what += " [" + std::to_string(b) + "," + std::to_string(e) + ")";
        throw BundleError(BundleError::Kind::IncompleteAdu, what, gaps.front().first);
    }

    std::vector<const Bundle*> ordered;
    for (const auto& f : fragments)
        ordered.push_back(&f);
    std::stable_sort(ordered.begin(), ordered.end(), [](const Bundle* a, const Bundle* b) {
        return a->fragment_offset < b->fragment_offset;
    });

    const Bundle& first = *ordered.front();
    Bundle out = first;
    out.proc_flags &= ~bundle_flags::kIsFragment;
    out.fragment_offset = 0;
    out.total_adu_length = 0;

    Bytes adu;
    adu.reserve(first.total_adu_length);
    for (const Bundle* f : ordered) {
        const std::uint64_t end = f->fragment_offset + f->payload().size();
        if (end <= adu.size())
            continue;
        const std::uint64_t skip = adu.size() - f->fragment_offset;
        adu.insert(adu.end(), f->payload().begin() + static_cast<std::ptrdiff_t>(skip), f->payload().end());
    }
    out.payload() = std::move(adu);
    return out;
}

} // namespace bpmux::bp
