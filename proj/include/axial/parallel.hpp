#pragma once

#include <cstddef>
#include <functional>

namespace axial {

/// Worker count: AXIAL_NUM_THREADS if set and positive, else the hardware
/// concurrency (at least 1).
std::size_t num_threads();

/// Runs body(i) for i in [0, n) on up to num_threads() threads. Each index
/// runs exactly once; callers write results into per-index slots so the
/// outcome does not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace axial
