#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace htype {

/// Worker count from HTYPE_THREADS, else the hardware concurrency.
inline int default_threads() {
  if (const char* e = std::getenv("HTYPE_THREADS")) {
    const int v = std::atoi(e);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/**
 * @brief Run fn(block) for block = 0..nblocks-1 on `threads` workers.
 *
 * Blocks are claimed dynamically; callers store per-block results and
 * combine them in block order, so results never depend on the worker count.
 * The first exception thrown by any block is rethrown.
 */
template <class F>
void parallel_blocks(int nblocks, int threads, F&& fn) {
  threads = std::max(1, std::min(threads, nblocks));
  if (threads == 1) {
    for (int b = 0; b < nblocks; ++b) fn(b);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex mu;
  auto work = [&]() {
    for (;;) {
      const int b = next.fetch_add(1);
      if (b >= nblocks) return;
      try {
        fn(b);
      } catch (...) {
        std::lock_guard<std::mutex> lk(mu);
        if (!err) err = std::current_exception();
        next = nblocks;
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace htype
