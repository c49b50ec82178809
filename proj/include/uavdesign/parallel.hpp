#pragma once

#include <cstddef>
#include <functional>

namespace uav {

// Worker count from UAV_THREADS, falling back to the hardware concurrency.
int default_thread_count();

// Runs body(i) for i in [0, n) over `threads` workers using contiguous blocks.
// Callers write results into pre-sized slots so output order never depends on
// scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body, int threads = default_thread_count());

}  // namespace uav
