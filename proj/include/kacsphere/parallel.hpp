// Deterministic work partitioning.
//
// Every Monte-Carlo loop in this library is a map over sample indices
// 0..n−1 whose per-index work is a pure function of (master seed, stream,
// index).  To make results byte-identical for *any* worker count, the
// index range is cut into fixed-size chunks — the chunk layout depends
// only on n, never on the number of workers — and each chunk writes its
// partial result into its own slot.  Callers reduce the slots
// sequentially (pairwise, in chunk order), so the floating-point sum is
// a fixed expression tree regardless of how chunks were interleaved at
// run time.
//
// The worker count comes from the environment variable KACLAB_WORKERS
// (default 1); it is a throughput knob only.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace kacsphere {

inline constexpr long kDefaultChunk = 8192;

/* Worker count from KACLAB_WORKERS, clamped to [1, 256].  Unset, empty or
 * unparsable values mean 1 (sequential). */
inline int worker_count() {
    const char* raw = std::getenv("KACLAB_WORKERS");
    if (raw == nullptr || *raw == '\0') return 1;
    char* end = nullptr;
    const long v = std::strtol(raw, &end, 10);
    if (end == raw || v < 1) return 1;
    return static_cast<int>(v > 256 ? 256 : v);
}

inline long chunk_count(long n, long chunk = kDefaultChunk) {
    return n <= 0 ? 0 : (n + chunk - 1) / chunk;
}

/*
 * Run body(chunk_index, begin, end) over the fixed partition of [0, n).
 * Chunks are claimed from an atomic ticket, so any number of threads
 * produces the same set of (chunk_index, begin, end) calls.  The body
 * must only write to per-chunk state (its slot); it is invoked
 * concurrently.  The first exception thrown by any chunk is rethrown on
 * the calling thread after all workers finish.
 */
template <class Body>
void parallel_chunks(long n, long chunk, Body&& body) {
    const long chunks = chunk_count(n, chunk);
    if (chunks == 0) return;
    const int workers = std::min<long>(worker_count(), chunks);
    if (workers <= 1) {
        for (long ci = 0; ci < chunks; ++ci)
            body(ci, ci * chunk, std::min(n, (ci + 1) * chunk));
        return;
    }
    std::atomic<long> ticket{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto drain = [&] {
        for (;;) {
            const long ci = ticket.fetch_add(1, std::memory_order_relaxed);
            if (ci >= chunks || failed.load(std::memory_order_relaxed)) return;
            try {
                body(ci, ci * chunk, std::min(n, (ci + 1) * chunk));
            } catch (...) {
                std::scoped_lock lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                failed.store(true, std::memory_order_relaxed);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (int w = 1; w < workers; ++w) pool.emplace_back(drain);
    drain();
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

template <class Body>
void parallel_chunks(long n, Body&& body) {
    parallel_chunks(n, kDefaultChunk, std::forward<Body>(body));
}

}  // namespace kacsphere
