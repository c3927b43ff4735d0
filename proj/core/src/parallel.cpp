#include "hikedim/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace hikedim {

namespace {
std::atomic<int> g_threads{0};  // 0 = follow hardware concurrency
}

void set_thread_count(int threads) { g_threads.store(threads < 1 ? 0 : threads); }

int thread_count() {
  int t = g_threads.load();
  if (t > 0) return t;
  unsigned hc = std::thread::hardware_concurrency();
  return hc ? static_cast<int>(hc) : 1;
}

namespace detail {

void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  const int nt = thread_count();
  if (nt <= 1) {
    body(0, n);
    return;
  }
  // A few chunks per thread smooths imbalance without fragmenting the work.
  const std::size_t pieces = std::min(n, static_cast<std::size_t>(nt) * 4);
  const std::size_t step = (n + pieces - 1) / pieces;
  // Exceptions must not unwind out of the parallel region; the first one is
  // captured and rethrown on the calling thread.
  std::exception_ptr err = nullptr;
  std::mutex err_mu;
#pragma omp parallel for schedule(dynamic, 1) num_threads(nt)
  for (long long p = 0; p < static_cast<long long>(pieces); ++p) {
    try {
      const std::size_t lo = static_cast<std::size_t>(p) * step;
      const std::size_t hi = std::min(n, lo + step);
      if (lo < hi) body(lo, hi);
    } catch (...) {
      std::lock_guard<std::mutex> lock(err_mu);
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
}

void parallel_index(std::size_t n, const std::function<void(std::size_t)>& body) {
  parallel_chunks(n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) body(i);
  });
}

}  // namespace detail

}  // namespace hikedim
