#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace xdgmm {

// Runs fn(i) for i in [0, n).  Each index is processed exactly once;
// callers own any output slots, so results are identical for every thread
// count.  threads <= 1 runs inline.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(n);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const int count = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    pool.reserve(count);
    for (int t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace xdgmm
