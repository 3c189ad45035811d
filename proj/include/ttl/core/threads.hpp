#pragma once

#include <cstddef>
#include <functional>

namespace ttl::core {

/// Upper bound from the TTM_THREADS environment variable (hardware concurrency if unset).
unsigned thread_cap();

/// Threads the contraction kernels may use. Defaults to 1; clamped to thread_cap().
unsigned thread_limit();
void set_thread_limit(unsigned threads);

/// Runs body(begin, end) over disjoint chunks of [0, count). Work items are
/// assigned to exactly one chunk, so results do not depend on the thread count.
void parallel_for(std::size_t count, std::size_t work_per_item,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace ttl::core
