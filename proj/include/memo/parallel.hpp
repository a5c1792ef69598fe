#pragma once

#include <cstddef>
#include <functional>

namespace memo {

/// Worker count: explicit request if non-zero, else MEMO_TAXA_THREADS, else hardware cores.
unsigned resolve_threads(unsigned requested = 0);

/// Runs body(i) for i in [0, n) on up to `threads` workers. Each index runs exactly
/// once; the first exception thrown by any body is rethrown after all workers join.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body);

}  // namespace memo
