#pragma once

#include <cstddef>
#include <functional>

namespace hikedim {

// Worker-thread count used by every internal parallel region. Unset (or any
// value < 1) means "use hardware concurrency".
void set_thread_count(int threads);
int thread_count();

namespace detail {

// Runs body(lo, hi) over a disjoint partition of [0, n). Workers write only
// inside their own chunk, so results are identical for every thread count.
void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

// Runs body(i) for i in [0, n), work-shared across threads.
void parallel_index(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace detail

}  // namespace hikedim
