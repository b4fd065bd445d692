#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace vibegen {

/// Worker count for batch-parallel kernels. 0 is the strict single-threaded
/// mode. Initialized from VIBEGEN_THREADS; unset means 0.
inline std::size_t& thread_count() {
    static std::size_t count = [] {
        const char* env = std::getenv("VIBEGEN_THREADS");
        if (env == nullptr || *env == '\0') return std::size_t{0};
        try {
            return static_cast<std::size_t>(std::stoul(env));
        } catch (const std::exception&) {
            return std::size_t{0};
        }
    }();
    return count;
}

inline bool deterministic_mode() { return thread_count() == 0; }

/// Runs fn(i) for i in [0, n). Each index must write disjoint memory; all
/// reductions stay in the caller, so results never depend on the worker count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min(thread_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace vibegen
