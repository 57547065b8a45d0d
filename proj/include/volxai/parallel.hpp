#pragma once

// Process-wide worker cap and a static-partition parallel loop. Work items
// are assigned to threads in contiguous chunks and every item writes only
// its own output slot, so results never depend on the thread count.

#include <cstddef>
#include <functional>

namespace volxai {

void set_thread_cap(int threads);
int thread_cap();

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace volxai
