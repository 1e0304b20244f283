#pragma once

#include <cstdint>
#include <functional>

namespace rccm {

// Worker count for parallel_for. Defaults to the hardware concurrency,
// capped by the RCCM_THREADS environment variable.
int worker_threads();

// Overrides the pool size (0 = re-read environment/hardware). Takes effect
// on the next parallel_for.
void set_worker_threads(int n);

// Runs fn(begin, end) over a deterministic contiguous partition of [0, n).
// Every index is processed by exactly one invocation, so results are
// bit-identical for any worker count as long as fn writes disjoint outputs.
// Falls back to a single inline call for small n.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace rccm
