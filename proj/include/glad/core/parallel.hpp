#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace glad {

// Shared worker pool. Sized once from GLAD_THREADS (hardware concurrency by
// default). Work is split into chunks whose count is independent of the
// thread count, and every chunk writes disjoint output, so results are
// bit-identical no matter how many workers run.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool(default_threads());
        return pool;
    }

    static int default_threads() {
        if (const char* env = std::getenv("GLAD_THREADS")) {
            const int n = std::atoi(env);
            if (n >= 1) return n;
        }
        const unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw);
    }

    int size() const { return static_cast<int>(workers_.size()) + 1; }

    // Runs fn(chunk) for chunk in [0, n_chunks). The calling thread
    // participates. Returns after all chunks complete. Nested calls (from
    // inside a chunk) degrade to inline serial execution.
    void run_chunks(int n_chunks, const std::function<void(int)>& fn) {
        if (n_chunks <= 0) return;
        if (size() == 1 || n_chunks == 1 || inside_pool()) {
            for (int c = 0; c < n_chunks; ++c) fn(c);
            return;
        }
        std::unique_lock lock(mutex_);
        task_ = &fn;
        next_chunk_.store(0, std::memory_order_relaxed);
        chunks_total_ = n_chunks;
        chunks_done_.store(0, std::memory_order_relaxed);
        ++generation_;
        lock.unlock();
        cv_.notify_all();
        work_loop(fn, n_chunks);
        std::unique_lock wait_lock(mutex_);
        done_cv_.wait(wait_lock, [&] {
            return chunks_done_.load(std::memory_order_acquire) >= chunks_total_;
        });
        task_ = nullptr;
    }

    ~ThreadPool() {
        {
            std::lock_guard lock(mutex_);
            stop_ = true;
            ++generation_;
        }
        cv_.notify_all();
        for (auto& t : workers_) t.join();
    }

private:
    explicit ThreadPool(int threads) {
        for (int i = 1; i < threads; ++i) {
            workers_.emplace_back([this] { worker_main(); });
        }
    }

    static bool& inside_pool_flag() {
        thread_local bool v = false;
        return v;
    }
    static bool inside_pool() { return inside_pool_flag(); }

    void work_loop(const std::function<void(int)>& fn, int n_chunks) {
        inside_pool_flag() = true;
        while (true) {
            const int c = next_chunk_.fetch_add(1, std::memory_order_relaxed);
            if (c >= n_chunks) break;
            fn(c);
            if (chunks_done_.fetch_add(1, std::memory_order_acq_rel) + 1 >= n_chunks) {
                done_cv_.notify_one();
            }
        }
        inside_pool_flag() = false;
    }

    void worker_main() {
        uint64_t seen = 0;
        while (true) {
            const std::function<void(int)>* task = nullptr;
            int total = 0;
            {
                std::unique_lock lock(mutex_);
                cv_.wait(lock, [&] { return stop_ || (task_ != nullptr && generation_ != seen); });
                if (stop_) return;
                seen = generation_;
                task = task_;
                total = chunks_total_;
            }
            if (task) work_loop(*task, total);
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    const std::function<void(int)>* task_ = nullptr;
    std::atomic<int> next_chunk_{0};
    std::atomic<int> chunks_done_{0};
    int chunks_total_ = 0;
    uint64_t generation_ = 0;
    bool stop_ = false;
};

// Splits [0, n) into fixed-size chunks (size independent of thread count) and
// runs body(begin, end) per chunk on the pool.
inline void parallel_ranges(int64_t n, int64_t chunk, const std::function<void(int64_t, int64_t)>& body) {
    if (n <= 0) return;
    const int n_chunks = static_cast<int>((n + chunk - 1) / chunk);
    ThreadPool::instance().run_chunks(n_chunks, [&](int c) {
        const int64_t lo = static_cast<int64_t>(c) * chunk;
        const int64_t hi = std::min<int64_t>(lo + chunk, n);
        body(lo, hi);
    });
}

}  // namespace glad
