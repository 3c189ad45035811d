#include "ttl/core/threads.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace ttl::core {

namespace {

std::atomic<unsigned> g_limit{1};

// Below this many scalar operations a chunk is not worth a thread.
constexpr std::size_t kMinWorkPerThread = std::size_t{1} << 16;

}  // namespace

unsigned thread_cap() {
  unsigned cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("TTM_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) cap = static_cast<unsigned>(v);
    } catch (const std::exception&) {
      // Unparseable values leave the hardware default in place.
    }
  }
  return cap;
}

unsigned thread_limit() { return std::min(g_limit.load(), thread_cap()); }

void set_thread_limit(unsigned threads) { g_limit.store(std::max(1u, threads)); }

void parallel_for(std::size_t count, std::size_t work_per_item,
                  const std::function<void(std::size_t, std::size_t)>& body) {
  if (count == 0) return;
  const std::size_t total_work = count * std::max<std::size_t>(1, work_per_item);
  std::size_t threads = std::min<std::size_t>(thread_limit(), count);
  threads = std::min(threads, std::max<std::size_t>(1, total_work / kMinWorkPerThread));
  if (threads <= 1) {
    body(0, count);
    return;
  }
  const std::size_t chunk = (count + threads - 1) / threads;
  std::vector<std::jthread> pool;
  pool.reserve(threads - 1);
  for (std::size_t t = 1; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
  body(0, std::min(count, chunk));
}

}  // namespace ttl::core
