#pragma once

#include <cstddef>
#include <functional>

namespace flowact {

/// Worker count for data-parallel evaluation: FLOWACT_THREADS if set and
/// positive, else the hardware concurrency (at least 1).
int worker_count();

/// Splits [0, n) into contiguous chunks and runs fn(begin, end) on each,
/// one thread per chunk. Chunk boundaries depend only on n and the worker
/// count, so per-chunk results can be combined deterministically.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace flowact
