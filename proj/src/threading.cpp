#include "stripmlp/threading.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace stripmlp {

namespace {
std::atomic<int> g_requested{0};
}

void set_worker_count(int workers) { g_requested.store(workers < 0 ? 0 : workers); }

int worker_count() {
    if (const char* env = std::getenv("STRIP_MLP_THREADS")) {
        try {
            return std::max(0, std::stoi(env));
        } catch (const std::exception&) {
            return 0;
        }
    }
    return g_requested.load();
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body) {
    if (n <= 0) {
        return;
    }
    const int workers = std::min<std::int64_t>(worker_count(), n);
    if (workers <= 1) {
        body(0, n);
        return;
    }
    const std::int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) {
        const std::int64_t begin = t * chunk;
        const std::int64_t end = std::min<std::int64_t>(begin + chunk, n);
        if (begin >= end) {
            break;
        }
        pool.emplace_back([&body, begin, end] { body(begin, end); });
    }
    for (auto& th : pool) {
        th.join();
    }
}

}  // namespace stripmlp
