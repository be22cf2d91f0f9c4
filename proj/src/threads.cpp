#include "knnlab/threads.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace knnlab::threads {

namespace {
std::atomic<unsigned> g_max_threads{0};
}

void set_max_threads(unsigned n) { g_max_threads.store(n); }

unsigned max_threads() {
    unsigned n = g_max_threads.load();
    if (n == 0) n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : n;
}

void parallel_chunks(uint64_t n, uint64_t chunk_size,
                     const std::function<void(size_t, uint64_t, uint64_t)>& fn) {
    if (n == 0) return;
    if (chunk_size == 0) chunk_size = 1;
    const uint64_t chunks = chunk_count(n, chunk_size);
    const unsigned workers = unsigned(std::min<uint64_t>(max_threads(), chunks));

    auto run_chunk = [&](uint64_t c) {
        uint64_t begin = c * chunk_size;
        uint64_t end = std::min(n, begin + chunk_size);
        fn(size_t(c), begin, end);
    };

    if (workers <= 1) {
        for (uint64_t c = 0; c < chunks; ++c) run_chunk(c);
        return;
    }

    std::atomic<uint64_t> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    auto worker = [&] {
        for (;;) {
            uint64_t c = next.fetch_add(1);
            if (c >= chunks) return;
            try {
                run_chunk(c);
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!err) err = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (unsigned t = 1; t < workers; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace knnlab::threads
