#pragma once

#include <cstddef>
#include <functional>

namespace nucav {

/// Number of workers used for grid evaluation: min(hardware_concurrency,
/// NUCAV_THREADS) with NUCAV_THREADS read from the environment; at least 1.
std::size_t worker_count();

/// Run fn(i) for i in [0, n) partitioned statically over worker_count()
/// threads.  Each index is touched exactly once, so writes to disjoint
/// per-index slots are race free and results are bitwise independent of the
/// partitioning.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace nucav
