#pragma once

#include <cstddef>
#include <functional>

namespace rectflow {

/// Runs task(i) for i in [0, count) on up to `threads` workers (0 picks the
/// hardware concurrency). Tasks must write only to their own slot; the
/// first exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& task);

}  // namespace rectflow
