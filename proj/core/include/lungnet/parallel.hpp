#pragma once

#include <cstddef>
#include <functional>

namespace lungnet {

// Runs body(i) for i in [0, count) on up to `threads` workers. Each index is
// visited exactly once; body must only write state owned by its index.
// Exceptions from workers are rethrown on the calling thread.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body);

}  // namespace lungnet
