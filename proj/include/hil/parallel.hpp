#pragma once

#include <cstddef>
#include <functional>

namespace hil {

// Global worker count for the embarrassingly parallel loops (per-query loss
// terms, feature extraction). Results never depend on it: every index writes
// its own slot and reductions happen afterwards in index order.
void set_num_threads(unsigned threads);
unsigned num_threads();

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace hil
