#pragma once

#include <cstddef>
#include <functional>

namespace dsurf {

/// Worker count for chunked evaluation (render, grid sampling). Defaults to
/// the available hardware parallelism; values < 1 reset to that default.
void set_thread_count(int n);
int thread_count();

/// Runs body(i) for i in [0, count). Work items are independent and write
/// disjoint outputs, so the result does not depend on the worker count.
/// The first exception thrown by any item is rethrown after all workers join.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace dsurf
