#pragma once

#include <cstdint>

namespace ttl::bench {

/// Counters fed by the replacement global operator new / delete linked in with
/// this library. Sizes are the requested byte counts.
std::uint64_t live_allocated_bytes();
std::uint64_t peak_allocated_bytes();
std::uint64_t allocation_count();
/// Sets the high-water mark to the current live byte count.
void reset_allocation_peak();

}  // namespace ttl::bench
