#pragma once

#include <cstddef>
#include <functional>

namespace bdgp {

/// Worker count used when a caller passes 0.
unsigned default_threads() noexcept;

/// Calls fn(i) for every i in [0, n) on up to `threads` workers (0 selects
/// default_threads()). If any call throws, remaining work is abandoned and the
/// exception from the lowest failing index is rethrown.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace bdgp
