#pragma once

#include <cstdint>
#include <functional>

namespace mvscale::parallel {

// Worker count: explicit request, else MVSCALE_WORKERS, else hardware
// concurrency. Always at least 1.
int resolve_workers(int requested);

// Runs fn(i) for i in [0, count). Work is split into contiguous chunks, one
// worker per chunk. fn must not touch shared mutable state except its own
// output slots; results must not depend on the split (keyed RNG guarantees
// this for the simulators).
void parallel_for(int count, int workers, const std::function<void(int)>& fn);

}  // namespace mvscale::parallel
