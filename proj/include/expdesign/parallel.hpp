#pragma once

#include <functional>

namespace expdesign {

/// Runs body(0) .. body(n - 1) on up to `threads` workers. Each index must only
/// write its own output slot; the lowest-index exception is rethrown.
void parallel_for(int n, int threads, const std::function<void(int)>& body);

}  // namespace expdesign
