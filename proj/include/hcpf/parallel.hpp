#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace hcpf {

/// Runs fn(task) for every task in [0, n_tasks) on up to `threads` workers.
/// Tasks must write disjoint outputs; the first exception is rethrown.
template <class Fn> void parallel_for(std::size_t n_tasks, std::size_t threads, Fn&& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n_tasks));
    if (threads == 1) {
        for (std::size_t t = 0; t < n_tasks; ++t)
            fn(t);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t t = next++; t < n_tasks; t = next++) {
            try {
                fn(t);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure)
                    failure = std::current_exception();
                next = n_tasks;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(threads - 1);
    for (std::size_t w = 1; w < threads; ++w)
        pool.emplace_back(worker);
    worker();
    for (auto& th : pool)
        th.join();
    if (failure)
        std::rethrow_exception(failure);
}

} // namespace hcpf
