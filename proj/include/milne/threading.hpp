#pragma once
// Deterministic work-sharing helpers. Work is split into fixed chunks whose
// boundaries depend only on the problem size, never on the thread count, and
// reductions combine chunk partials in index order — so results are bitwise
// identical for any --threads value.

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace milne {

inline int hardware_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

// Run body(i) for i in [0,n). Chunks of fixed size are handed to workers via
// an atomic cursor; bodies must not race with one another on shared state.
inline void parallel_for(std::size_t n, int threads,
                         const std::function<void(std::size_t)>& body) {
    if (threads < 1) threads = 1;
    if (threads == 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const std::size_t chunk = std::max<std::size_t>(1, n / (4 * threads));
    std::atomic<std::size_t> cursor{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t lo = cursor.fetch_add(chunk);
            if (lo >= n) return;
            const std::size_t hi = std::min(n, lo + chunk);
            for (std::size_t i = lo; i < hi; ++i) body(i);
        }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
}

// Deterministic reduction: fixed chunk width (independent of threads), each
// chunk reduced serially into its own slot, slots combined in index order.
inline double chunked_sum(std::size_t n, int threads, std::size_t chunk_width,
                          const std::function<double(std::size_t)>& term) {
    if (chunk_width < 1) chunk_width = 1;
    const std::size_t n_chunks = (n + chunk_width - 1) / chunk_width;
    std::vector<double> partial(n_chunks, 0.0);
    parallel_for(n_chunks, threads, [&](std::size_t c) {
        const std::size_t lo = c * chunk_width, hi = std::min(n, lo + chunk_width);
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += term(i);
        partial[c] = s;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

}  // namespace milne
