#pragma once

#include <cstddef>
#include <functional>

namespace winnorm {

/// Intra-run worker count: WINNORM_THREADS if set and positive, otherwise 1.
std::size_t thread_budget();

/// Runs fn(i) for i in [0, count) across at most thread_budget() threads.
/// Callers must make each fn(i) write disjoint memory; the work split never
/// changes the result.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace winnorm
