#pragma once

#include <cstddef>
#include <functional>

namespace calib {

// Worker thread budget: hardware concurrency, capped by the CALIB_THREADS
// environment variable when set. Always at least 1.
std::size_t thread_budget();

// Splits [0, n) into chunks of at most chunk_size elements and runs
// fn(chunk_index, begin, end) over the thread budget. The chunk grid depends
// only on n and chunk_size, never on the thread count, so callers can store
// per-chunk partial results and reduce them in chunk order for totals that do
// not vary with parallelism.
void for_chunks(std::size_t n, std::size_t chunk_size,
                const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

}  // namespace calib
