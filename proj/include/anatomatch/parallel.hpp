#pragma once

#include <cstdint>
#include <functional>

namespace anatomatch {

// Process-wide cap on worker threads. 0 means hardware concurrency.
void set_thread_count(int n);
int thread_count();

// Runs body(begin, end) over contiguous chunks of [0, n). Chunk boundaries
// depend only on n and grain, never on the worker count, so any per-chunk
// result reduced in chunk order is identical for every thread setting.
void parallel_chunks(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& body);

// Convenience: body(i) for every i in [0, n).
void parallel_for(int64_t n, const std::function<void(int64_t)>& body);

}  // namespace anatomatch
