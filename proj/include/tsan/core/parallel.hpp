#pragma once

#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace tsan {

// Worker count for parallel_for. Results are bit-identical for any count:
// tasks only ever write disjoint slices, and every reduction in the library
// is performed in a fixed order outside the parallel region.
inline std::atomic<int>& thread_count_ref() {
  static std::atomic<int> n{0};
  return n;
}

// n >= 1 fixes the worker count; 0 restores the hardware default.
inline void set_thread_count(int n) { thread_count_ref().store(n < 0 ? 0 : n); }

inline int thread_count() {
  int n = thread_count_ref().load();
  if (n > 0) return n;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Splits [0, n) into contiguous chunks and runs fn(lo, hi) on the workers.
// Only valid for elementwise-independent writes: chunk boundaries vary with
// the worker count, so no cross-element reduction may happen inside fn.
template <typename F>
void parallel_chunks(std::int64_t n, F&& fn);

// Runs f(i) for i in [0, n_tasks). Static stride partition; each worker owns
// the index set {k, k+nw, k+2nw, ...}.
template <typename F>
void parallel_for(int n_tasks, F&& f) {
  const int nw = std::min(thread_count(), n_tasks);
  if (nw <= 1) {
    for (int i = 0; i < n_tasks; ++i) f(i);
    return;
  }
  std::exception_ptr first_error = nullptr;
  std::atomic<bool> failed{false};
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(nw));
  for (int k = 0; k < nw; ++k) {
    workers.emplace_back([&, k]() {
      try {
        for (int i = k; i < n_tasks; i += nw) f(i);
      } catch (...) {
        bool expected = false;
        if (failed.compare_exchange_strong(expected, true)) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

template <typename F>
void parallel_chunks(std::int64_t n, F&& fn) {
  const int nw = thread_count();
  if (nw <= 1 || n < (1 << 15)) {
    if (n > 0) fn(std::int64_t{0}, n);
    return;
  }
  parallel_for(nw, [&](int k) {
    const std::int64_t lo = n * k / nw;
    const std::int64_t hi = n * (k + 1) / nw;
    if (lo < hi) fn(lo, hi);
  });
}

}  // namespace tsan
