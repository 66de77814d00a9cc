#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace utd {

/// Runs fn(i) for i in [0, n) on at most `workers` threads. Every index runs
/// even if some throw; returns one exception_ptr per index (null on success).
inline std::vector<std::exception_ptr> parallel_for(std::size_t n, std::size_t workers,
                                                    const std::function<void(std::size_t)>& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        worker();
        return errors;
    }
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back(worker);
    }
    return errors;
}

/// As parallel_for, but rethrows the first failure by index.
inline void parallel_for_each(std::size_t n, std::size_t workers,
                              const std::function<void(std::size_t)>& fn) {
    auto errors = parallel_for(n, workers, fn);
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

} // namespace utd
