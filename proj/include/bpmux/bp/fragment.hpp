#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "bpmux/bp/bundle.hpp"

namespace bpmux::bp {

/// Splits the payload into ceil(len / max_payload) fragments. Blocks flagged
/// replicate-in-fragments go into every fragment, others only into the first.
/// A bundle that already fits is returned unchanged as a single element.
std::vector<Bundle> fragment_bundle(const Bundle& bundle, std::uint64_t max_payload);

/// Byte ranges [first, second) of the ADU not covered by `fragments`.
std::vector<std::pair<std::uint64_t, std::uint64_t>> missing_ranges(std::span<const Bundle> fragments);

/// Rebuilds the original bundle. Overlaps are resolved in favour of the
/// fragment with the lowest offset.
/// Throws BundleError(IncompleteAdu | InconsistentFragments).
Bundle reassemble(std::span<const Bundle> fragments);

/// True if `a` and `b` are fragments of the same ADU.
bool same_adu(const Bundle& a, const Bundle& b);

} // namespace bpmux::bp
