#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <thread>
#include <utility>
#include <vector>

namespace hybridreg {

// Work is split into fixed-size chunks whose boundaries do not depend on the
// thread count, and reductions merge per-chunk partials in chunk order, so
// results are bit-identical for any --threads value.
inline constexpr std::int64_t kChunkSize = 8192;

inline std::int64_t chunk_count(std::int64_t n) { return (n + kChunkSize - 1) / kChunkSize; }

// fn(chunk_index, begin, end)
template <class Fn>
inline void parallel_chunks(std::int64_t n, int threads, Fn&& fn) {
    if (n <= 0) return;
    const std::int64_t nchunks = chunk_count(n);
    const int use = static_cast<int>(std::min<std::int64_t>(threads < 1 ? 1 : threads, nchunks));
    auto run_chunk = [&](std::int64_t c) {
        const std::int64_t b = c * kChunkSize;
        fn(c, b, std::min(n, b + kChunkSize));
    };
    if (use <= 1) {
        for (std::int64_t c = 0; c < nchunks; ++c) run_chunk(c);
        return;
    }
    std::atomic<std::int64_t> next{0};
    std::exception_ptr first_error;
    std::atomic<bool> failed{false};
    auto worker = [&] {
        try {
            for (;;) {
                const std::int64_t c = next.fetch_add(1);
                if (c >= nchunks || failed.load()) break;
                run_chunk(c);
            }
        } catch (...) {
            if (!failed.exchange(true)) first_error = std::current_exception();
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(use - 1);
    for (int t = 1; t < use; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (failed.load() && first_error) std::rethrow_exception(first_error);
}

// fn(i) with disjoint writes only.
template <class Fn>
inline void parallel_for_each(std::int64_t n, int threads, Fn&& fn) {
    parallel_chunks(n, threads, [&](std::int64_t, std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i) fn(i);
    });
}

// chunk_fn(begin, end) -> partial; partials are summed in chunk order.
template <class Fn>
inline double parallel_sum(std::int64_t n, int threads, Fn&& chunk_fn) {
    std::vector<double> partial(static_cast<std::size_t>(chunk_count(n)), 0.0);
    parallel_chunks(n, threads, [&](std::int64_t c, std::int64_t b, std::int64_t e) {
        partial[static_cast<std::size_t>(c)] = chunk_fn(b, e);
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

inline int resolve_thread_count(int requested) {
    if (requested >= 1) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace hybridreg
