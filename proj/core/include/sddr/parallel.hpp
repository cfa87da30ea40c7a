#pragma once

#include <cstddef>
#include <functional>

namespace sddr {

// Worker cap from SDDR_THREADS (default: hardware concurrency, at least 1).
unsigned worker_threads();

// Runs fn(0..n-1) on up to worker_threads() threads. Every task runs to
// completion; the exception of the lowest failing index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace sddr
