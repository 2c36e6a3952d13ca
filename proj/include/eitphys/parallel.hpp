#pragma once

#include <cstdint>
#include <functional>

namespace eitphys {

// Number of worker threads used by parallel_for. Reads EITPHYS_THREADS once;
// defaults to the hardware concurrency (capped at 8).
int worker_count();

// Splits [0, n) into contiguous chunks, one per worker, and runs
// body(begin, end) on each. Every index is processed by exactly one thread and
// chunk boundaries depend only on n and the worker count, so results are
// bit-identical for any thread count as long as chunks write disjoint outputs.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body);

}  // namespace eitphys
