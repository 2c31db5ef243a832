#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace synermed {

/// Runs fn(index) for every index in [0, n) across `jobs` threads. Each index
/// is an independent work unit writing to its own output slot, so results do
/// not depend on the thread count. The first exception is rethrown.
template <typename Fn>
void parallel_for(size_t n, int jobs, Fn&& fn) {
    if (n == 0) return;
    size_t workers = jobs <= 1 ? 1 : std::min<size_t>(static_cast<size_t>(jobs), n);
    if (workers == 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers);
    for (size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            try {
                for (size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace synermed
