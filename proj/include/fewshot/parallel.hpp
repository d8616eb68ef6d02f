#pragma once

#include <cstddef>
#include <functional>

namespace fewshot {

// Global worker cap for parallel_for. 0 restores the hardware default.
void set_worker_threads(unsigned n);
unsigned worker_threads();

// Runs body(0..n-1) over the worker pool with a static partition. Each index
// writes only its own output slot, so results never depend on the thread
// count; callers reduce the slots in index order afterwards.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace fewshot
