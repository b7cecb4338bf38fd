#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace smk {

/// Worker count from SMK_THREADS (defaults to hardware concurrency, min 1).
std::size_t worker_count();

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Items are
/// statically partitioned; the first exception raised is rethrown.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& fn);

}  // namespace smk
