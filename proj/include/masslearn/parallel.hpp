#pragma once

#include <cstddef>
#include <functional>

namespace masslearn {

// Worker count used by parallel_for; 1 by default.
void set_threads(std::size_t threads);
std::size_t threads();

// Runs body(i) for i in [0, n). Each index runs exactly once; callers
// write results to index-owned slots and reduce afterwards in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace masslearn
