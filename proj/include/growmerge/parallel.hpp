// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace growmerge {

// Process-wide worker cap for per-tensor parallel maps. Defaults to the
// GROWMERGE_THREADS environment variable, then hardware concurrency.
inline std::size_t& thread_cap_slot() {
    static std::size_t cap = [] {
        if (const char* env = std::getenv("GROWMERGE_THREADS")) {
            const long v = std::strtol(env, nullptr, 10);
            if (v > 0) return static_cast<std::size_t>(v);
        }
        const unsigned hw = std::thread::hardware_concurrency();
        return static_cast<std::size_t>(hw > 0 ? hw : 1);
    }();
    return cap;
}

inline void set_thread_cap(std::size_t n) { thread_cap_slot() = std::max<std::size_t>(1, n); }
inline std::size_t thread_cap() { return thread_cap_slot(); }

// Runs fn(i) for i in [0, n). Each index writes only its own output slot, so
// results are identical to the sequential loop regardless of scheduling.
template <class F>
void parallel_for(std::size_t n, F&& fn) {
    const std::size_t workers = std::min(thread_cap(), n);
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr first_error = nullptr;
    std::mutex error_mu;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace growmerge
