#pragma once

#include <cstdint>
#include <functional>

namespace mate {

/// Worker count used by parallel_for. Defaults to 1.
int thread_count();
void set_thread_count(int n);

/// Runs body(begin, end) over contiguous chunks of [0, n). Chunks are disjoint and
/// callers must only write to chunk-owned state.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace mate
