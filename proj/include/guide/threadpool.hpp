#pragma once

#include <cstddef>
#include <functional>

namespace guide {

// Runs fn(i) for i in [0, n) across up to `threads` workers. Callers must
// only write to per-index slots; with that discipline results are identical
// for any thread count. Exceptions from workers are rethrown in the caller.
void parallel_for(size_t n, size_t threads, const std::function<void(size_t)>& fn);

}  // namespace guide
