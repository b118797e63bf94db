#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace ibp {

inline int hardware_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

// Runs fn(chunk) for chunk in [0, num_chunks). Chunk boundaries are the
// caller's; they must not depend on the thread count, so results stay
// deterministic however the work is scheduled.
inline void parallel_chunks(int num_chunks, int num_threads, const std::function<void(int)>& fn) {
  if (num_chunks <= 0) return;
  if (num_threads <= 1 || num_chunks == 1) {
    for (int i = 0; i < num_chunks; ++i) fn(i);
    return;
  }
  const int workers = std::min(num_threads, num_chunks);
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= num_chunks) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace ibp
