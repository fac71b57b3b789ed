#pragma once

#include <cstddef>
#include <functional>

namespace atlas {

/// Worker count: ATLAS_THREADS if set and positive, else the hardware count.
std::size_t worker_count();

/// Runs body(0..n-1) across worker_count() threads. The first exception
/// thrown by any body is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace atlas
