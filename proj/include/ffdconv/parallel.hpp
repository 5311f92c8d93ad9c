#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace ffdconv::parallel {

namespace detail {
inline std::atomic<int>& thread_count_storage() {
  static std::atomic<int> count{0};  // 0 = not yet initialized
  return count;
}

inline int initial_thread_count() {
  if (const char* env = std::getenv("FFDCONV_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}
}  // namespace detail

inline int thread_count() {
  int n = detail::thread_count_storage().load(std::memory_order_relaxed);
  if (n == 0) {
    n = detail::initial_thread_count();
    detail::thread_count_storage().store(n, std::memory_order_relaxed);
  }
  return n;
}

inline void set_thread_count(int n) {
  detail::thread_count_storage().store(n < 1 ? 1 : n, std::memory_order_relaxed);
}

// Splits [0, n) into contiguous chunks, one per worker. Workers must write
// disjoint outputs; per-index arithmetic is identical for every thread count,
// so results are bitwise independent of parallelism.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                         std::size_t min_per_thread = 64) {
  if (n == 0) return;
  std::size_t workers = static_cast<std::size_t>(thread_count());
  if (workers > 1 && n / workers < min_per_thread) workers = n / min_per_thread;
  if (workers <= 1) {
    body(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto run = [&](std::size_t begin, std::size_t end) {
    try {
      body(begin, end);
    } catch (...) {
      if (!failed.exchange(true)) error = std::current_exception();
    }
  };
  for (std::size_t w = 1; w < workers; ++w) {
    std::size_t begin = n * w / workers;
    std::size_t end = n * (w + 1) / workers;
    pool.emplace_back(run, begin, end);
  }
  run(0, n / workers);
  for (auto& t : pool) t.join();
  if (failed.load()) std::rethrow_exception(error);
}

}  // namespace ffdconv::parallel
