#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

// Fork-join helpers whose results are bit-identical for every worker count:
// parallel_for writes each index's outputs independently, and blocked_reduce
// always partitions into the same fixed-size blocks and combines them in
// block order on the calling thread.

namespace factorcf {

class ThreadPool {
  public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    void set_workers(int n) {
        std::lock_guard<std::mutex> guard(api_mutex_);
        stop_workers();
        workers_target_ = n < 1 ? 1 : n;
        start_workers();
    }

    int workers() const { return workers_target_; }

    /// Runs chunk_fn(0..chunks-1), blocking until all chunks finish. The
    /// first exception thrown by any chunk is rethrown on the caller.
    void run(std::size_t chunks, const std::function<void(std::size_t)>& chunk_fn) {
        if (chunks == 0) return;
        std::lock_guard<std::mutex> guard(api_mutex_);
        if (threads_.empty() || chunks == 1) {
            for (std::size_t c = 0; c < chunks; ++c) chunk_fn(c);
            return;
        }
        auto job = std::make_shared<Job>();
        job->fn = &chunk_fn;
        job->total = chunks;
        job->pending = chunks;
        {
            std::unique_lock<std::mutex> lock(mutex_);
            job_ = job;
            ++generation_;
        }
        cv_task_.notify_all();
        drain(*job);
        {
            std::unique_lock<std::mutex> lock(mutex_);
            cv_done_.wait(lock, [&] { return job->pending.load() == 0; });
            if (job_ == job) job_.reset();
        }
        if (job->error) std::rethrow_exception(job->error);
    }

    ~ThreadPool() { stop_workers(); }

  private:
    // One fork-join invocation. Stale workers can only ever touch their own
    // (exhausted) job object, never a newer one.
    struct Job {
        const std::function<void(std::size_t)>* fn = nullptr;
        std::atomic<std::size_t> next{0};
        std::size_t total = 0;
        std::atomic<std::size_t> pending{0};
        std::exception_ptr error = nullptr;
        std::mutex error_mutex;
    };

    ThreadPool() {
        workers_target_ = static_cast<int>(std::thread::hardware_concurrency());
        if (workers_target_ < 1) workers_target_ = 1;
        start_workers();
    }

    void start_workers() {
        // worker 0 is the calling thread; spawn the rest
        for (int i = 1; i < workers_target_; ++i)
            threads_.emplace_back([this] { worker_loop(); });
    }

    void stop_workers() {
        {
            std::unique_lock<std::mutex> lock(mutex_);
            stopping_ = true;
        }
        cv_task_.notify_all();
        for (auto& t : threads_) t.join();
        threads_.clear();
        stopping_ = false;
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        for (;;) {
            std::shared_ptr<Job> job;
            {
                std::unique_lock<std::mutex> lock(mutex_);
                cv_task_.wait(lock, [&] { return stopping_ || (generation_ != seen && job_); });
                if (stopping_) return;
                seen = generation_;
                job = job_;
            }
            if (job) drain(*job);
        }
    }

    void drain(Job& job) {
        for (;;) {
            std::size_t c = job.next.fetch_add(1);
            if (c >= job.total) break;
            try {
                (*job.fn)(c);
            } catch (...) {
                std::lock_guard<std::mutex> lock(job.error_mutex);
                if (!job.error) job.error = std::current_exception();
            }
            if (job.pending.fetch_sub(1) == 1) {
                std::lock_guard<std::mutex> lock(mutex_);
                cv_done_.notify_all();
            }
        }
    }

    std::mutex api_mutex_;
    std::mutex mutex_;
    std::condition_variable cv_task_;
    std::condition_variable cv_done_;
    std::vector<std::thread> threads_;
    std::shared_ptr<Job> job_;
    std::uint64_t generation_ = 0;
    bool stopping_ = false;
    int workers_target_ = 1;
};

inline void set_max_threads(int n) { ThreadPool::instance().set_workers(n); }
inline int max_threads() { return ThreadPool::instance().workers(); }

/// Calls fn(begin, end) over a partition of [0, n). Each index must be
/// processed independently of the others.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    auto& pool = ThreadPool::instance();
    const std::size_t min_grain = 256;
    std::size_t chunks = std::min<std::size_t>(pool.workers(), (n + min_grain - 1) / min_grain);
    if (chunks <= 1) {
        fn(0, n);
        return;
    }
    std::size_t per = (n + chunks - 1) / chunks;
    pool.run(chunks, [&](std::size_t c) {
        std::size_t b = c * per;
        std::size_t e = std::min(n, b + per);
        if (b < e) fn(b, e);
    });
}

/// Deterministic parallel reduction: [0, n) is cut into fixed 2048-wide
/// blocks regardless of thread count; block_fn fills one partial per block;
/// combine folds partials in block order.
template <class Partial>
void blocked_reduce(std::size_t n,
                    const std::function<void(std::size_t, std::size_t, Partial&)>& block_fn,
                    const std::function<void(Partial&)>& combine,
                    const std::function<Partial()>& make_partial) {
    if (n == 0) return;
    const std::size_t block = 2048;
    std::size_t num_blocks = (n + block - 1) / block;
    std::vector<Partial> partials;
    partials.reserve(num_blocks);
    for (std::size_t b = 0; b < num_blocks; ++b) partials.push_back(make_partial());
    parallel_for(num_blocks, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t b = lo; b < hi; ++b)
            block_fn(b * block, std::min(n, (b + 1) * block), partials[b]);
    });
    for (std::size_t b = 0; b < num_blocks; ++b) combine(partials[b]);
}

}  // namespace factorcf
