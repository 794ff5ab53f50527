#pragma once

#include <cstddef>
#include <functional>

namespace vapl {

// Worker count: VAPL_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

// Calls fn(i) for i in [0, n) across up to `workers` threads. Each index is
// handled exactly once; callers write results by index, so the outcome does
// not depend on scheduling. The first exception thrown is rethrown.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace vapl
