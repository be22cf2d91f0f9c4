#ifndef KNNLAB_THREADS_HPP_
#define KNNLAB_THREADS_HPP_

#include <cstdint>
#include <functional>

namespace knnlab::threads {

// 0 restores the hardware default.
void set_max_threads(unsigned n);
unsigned max_threads();

// Runs fn(chunk_index, begin, end) over [0, n) split into fixed chunks of
// chunk_size. Chunk boundaries depend only on n and chunk_size, never on the
// worker count, so callers that reduce per-chunk results in chunk order get
// bit-identical output for any --threads setting.
void parallel_chunks(uint64_t n, uint64_t chunk_size,
                     const std::function<void(size_t, uint64_t, uint64_t)>& fn);

inline uint64_t chunk_count(uint64_t n, uint64_t chunk_size) {
    return chunk_size == 0 ? 0 : (n + chunk_size - 1) / chunk_size;
}

}  // namespace knnlab::threads

#endif  // KNNLAB_THREADS_HPP_
