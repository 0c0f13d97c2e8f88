#pragma once

#include <cstddef>
#include <functional>

namespace dhsl {

/// Number of worker threads used by batch-parallel kernels. Results do not
/// depend on this value; every reduction runs in a fixed order.
void set_num_workers(std::size_t workers);
std::size_t num_workers();

/// Runs fn(i) for i in [0, count), split into contiguous chunks across the
/// configured workers. fn must only write state owned by index i.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace dhsl
