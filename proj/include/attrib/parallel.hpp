#pragma once

#include <cstddef>
#include <functional>

namespace attrib {

/// Worker count: ATTRIB_THREADS if set and positive, otherwise hardware concurrency.
std::size_t worker_count();

/// Runs body(i) for i in [0, n) across worker_count() threads with a static partition.
/// Callers write results into index-addressed slots, so output does not depend on scheduling.
/// The first exception thrown (lowest index) is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace attrib
