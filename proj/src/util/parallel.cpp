#include "eitphys/parallel.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace eitphys {

namespace {

struct Pool {
    std::vector<std::thread> threads;
    std::mutex mu;
    std::condition_variable cv_work;
    std::condition_variable cv_done;
    const std::function<void(int64_t, int64_t)>* body = nullptr;
    std::vector<std::pair<int64_t, int64_t>> chunks;
    uint64_t generation = 0;
    int pending = 0;
    bool stop = false;

    explicit Pool(int n_workers) {
        for (int w = 0; w < n_workers; ++w) {
            threads.emplace_back([this, w] { worker_loop(w); });
        }
    }

    ~Pool() {
        {
            std::lock_guard<std::mutex> lock(mu);
            stop = true;
        }
        cv_work.notify_all();
        for (auto& t : threads) t.join();
    }

    void worker_loop(int w) {
        uint64_t seen = 0;
        for (;;) {
            std::unique_lock<std::mutex> lock(mu);
            cv_work.wait(lock, [&] { return stop || generation != seen; });
            if (stop) return;
            seen = generation;
            auto chunk = chunks[static_cast<size_t>(w) + 1];  // chunk 0 runs on the caller
            auto* fn = body;
            lock.unlock();
            if (chunk.first < chunk.second) (*fn)(chunk.first, chunk.second);
            lock.lock();
            if (--pending == 0) cv_done.notify_one();
        }
    }

    // One parallel section at a time; concurrent callers (independent model
    // threads) serialize here.
    std::mutex run_mu;

    void run(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
        std::lock_guard<std::mutex> run_lock(run_mu);
        const int parts = static_cast<int>(threads.size()) + 1;
        std::vector<std::pair<int64_t, int64_t>> parts_vec(parts);
        const int64_t base = n / parts;
        const int64_t rem = n % parts;
        int64_t at = 0;
        for (int p = 0; p < parts; ++p) {
            const int64_t len = base + (p < rem ? 1 : 0);
            parts_vec[p] = {at, at + len};
            at += len;
        }
        {
            std::lock_guard<std::mutex> lock(mu);
            body = &fn;
            chunks = std::move(parts_vec);
            pending = static_cast<int>(threads.size());
            ++generation;
        }
        cv_work.notify_all();
        if (chunks[0].first < chunks[0].second) fn(chunks[0].first, chunks[0].second);
        std::unique_lock<std::mutex> lock(mu);
        cv_done.wait(lock, [&] { return pending == 0; });
    }
};

int detect_workers() {
    if (const char* env = std::getenv("EITPHYS_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return std::min(v, 64);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::clamp(hw, 1u, 8u));
}

}  // namespace

int worker_count() {
    static const int n = detect_workers();
    return n;
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
    if (n <= 0) return;
    const int workers = worker_count();
    if (workers <= 1 || n == 1) {
        body(0, n);
        return;
    }
    static Pool pool(workers - 1);
    pool.run(n, body);
}

}  // namespace eitphys
