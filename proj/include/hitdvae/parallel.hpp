#pragma once

#include <cstddef>
#include <functional>

namespace hitdvae {

/// Worker cap: HITDVAE_THREADS when set, otherwise hardware concurrency.
std::size_t worker_count();

/// Runs body(i) for i in [0, n). Each index runs exactly once; callers write
/// results into per-index slots so the outcome does not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace hitdvae
