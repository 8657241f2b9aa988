#pragma once

#include <cstddef>
#include <functional>

namespace odc {

/// Worker count used by batch-parallel kernels. Defaults to 1.
void set_thread_count(std::size_t n);
std::size_t thread_count();

/// Splits [0, n) into at most thread_count() contiguous chunks and runs
/// fn(chunk, begin, end) for each. Chunk boundaries depend only on n and
/// the thread count, so per-chunk partial results reduced in chunk order
/// are reproducible for a fixed thread count.
void parallel_chunks(
    std::size_t n,
    const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

/// Number of chunks parallel_chunks(n, ...) will use.
std::size_t chunk_count(std::size_t n);

}  // namespace odc
