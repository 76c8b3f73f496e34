#pragma once

#include <cstddef>
#include <functional>

namespace dualmamba {

// Worker thread cap. Defaults to the DUALMAMBA_THREADS environment variable
// (1 when unset or invalid).
std::size_t worker_threads();
void set_worker_threads(std::size_t n);

// Runs fn(begin, end) over contiguous chunks of [0, n). Callers must only
// write disjoint outputs per index; chunking never affects results.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace dualmamba
