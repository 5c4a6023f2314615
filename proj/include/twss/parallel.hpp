#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace twss {

/// Worker cap from TWSS_THREADS (0 or unset = hardware concurrency).
inline int thread_count() {
  int n = 0;
  if (const char* s = std::getenv("TWSS_THREADS")) n = std::atoi(s);
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  return std::max(n, 1);
}

/// Runs fn(i) for i in [0, n). Each index is handled by exactly one worker, so results
/// written per index are independent of the schedule.
template <class Fn>
void parallel_for(std::ptrdiff_t n, Fn&& fn) {
  const int nt = static_cast<int>(std::min<std::ptrdiff_t>(thread_count(), n));
  if (nt <= 1) {
    for (std::ptrdiff_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::ptrdiff_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < nt; ++t) {
    pool.emplace_back([&] {
      try {
        for (std::ptrdiff_t i; (i = next++) < n;) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!err) err = std::current_exception();
        next = n;
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace twss
