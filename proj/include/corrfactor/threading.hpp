#ifndef CORRFACTOR_THREADING_HPP
#define CORRFACTOR_THREADING_HPP

#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace corrfactor {

// Worker count: explicit request wins, then CORRFACTOR_THREADS, then the
// hardware count. Always at least 1.
inline int resolve_threads(int requested = 0) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("CORRFACTOR_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) return static_cast<int>(v);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

// Applies fn(i) for i in [0, count) across workers. Each index writes only
// its own output slot, so results are bitwise identical regardless of the
// worker count. The first exception is rethrown after all workers join.
template <typename Fn>
void parallel_for_index(std::size_t count, int threads, Fn&& fn) {
    threads = resolve_threads(threads);
    if (threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), count);
    pool.reserve(workers);
    std::atomic<int> error_guard{0};
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            while (!failed.load(std::memory_order_relaxed)) {
                std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
                if (i >= count) break;
                try {
                    fn(i);
                } catch (...) {
                    if (error_guard.fetch_add(1) == 0) first_error = std::current_exception();
                    failed.store(true, std::memory_order_relaxed);
                    break;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace corrfactor

#endif
