#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace pathctrl {

/// Thread count used by the library. Defaults to PATHCTRL_THREADS when set,
/// otherwise 1. Results never depend on this value.
inline std::size_t& thread_count_ref() {
    static std::size_t n = [] {
        if (const char* env = std::getenv("PATHCTRL_THREADS")) {
            const long v = std::strtol(env, nullptr, 10);
            if (v > 0) return static_cast<std::size_t>(v);
        }
        return std::size_t{1};
    }();
    return n;
}

inline std::size_t thread_count() { return thread_count_ref(); }
inline void set_thread_count(std::size_t n) { thread_count_ref() = std::max<std::size_t>(1, n); }

/// Work is cut into fixed blocks of this many items, independent of the thread
/// count, so per-block partial results and their combination order are fixed.
inline constexpr std::size_t kBlockSize = 2048;

/// Calls body(begin, end, block_index) for every block of [0, n). The first
/// exception thrown by any block is rethrown on the calling thread.
template <class Body>
void parallel_blocks(std::size_t n, Body&& body) {
    const std::size_t n_blocks = (n + kBlockSize - 1) / kBlockSize;
    const std::size_t workers = std::min(thread_count(), n_blocks);
    if (workers <= 1) {
        for (std::size_t b = 0; b < n_blocks; ++b) body(b * kBlockSize, std::min(n, (b + 1) * kBlockSize), b);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex err_mutex;
    auto run = [&] {
        for (;;) {
            const std::size_t b = next.fetch_add(1);
            if (b >= n_blocks) return;
            try {
                body(b * kBlockSize, std::min(n, (b + 1) * kBlockSize), b);
            } catch (...) {
                std::lock_guard lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
                next.store(n_blocks);
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t i = 1; i < workers; ++i) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

/// Pairwise (tree) summation; the association order depends only on the length.
inline double pairwise_sum(std::span<const double> xs) {
    if (xs.size() <= 8) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
    double sd = 0.0;
};

inline MeanSe mean_se(std::span<const double> xs) {
    MeanSe r;
    const std::size_t n = xs.size();
    if (n == 0) return r;
    r.mean = pairwise_sum(xs) / static_cast<double>(n);
    if (n < 2) return r;
    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) sq[i] = (xs[i] - r.mean) * (xs[i] - r.mean);
    r.sd = std::sqrt(pairwise_sum(sq) / static_cast<double>(n - 1));
    r.se = r.sd / std::sqrt(static_cast<double>(n));
    return r;
}

}  // namespace pathctrl
