#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace dmat {

// Fixed-size worker pool. Width is min(hardware_concurrency, DMAT_THREADS),
// or exactly DMAT_THREADS when set. Width 1 runs everything inline.
// parallel_for assigns contiguous disjoint index chunks, so any computation
// whose chunks touch disjoint output ranges is schedule-independent.
class ThreadPool {
 public:
  explicit ThreadPool(int threads) : width_(threads < 1 ? 1 : threads) {
    for (int i = 0; i < width_ - 1; ++i)
      workers_.emplace_back([this] { worker_loop(); });
  }

  ~ThreadPool() {
    {
      std::unique_lock lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  int width() const { return width_; }

  // f(begin, end) over disjoint ranges covering [0, n); blocks until done
  void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& f) {
    if (n <= 0) return;
    if (width_ == 1 || n == 1) {
      f(0, n);
      return;
    }
    int64_t chunks = width_ < n ? width_ : n;
    int64_t per = (n + chunks - 1) / chunks;
    auto pending = std::make_shared<Latch>();
    pending->count.store(int((n + per - 1) / per));
    {
      std::unique_lock lk(mu_);
      for (int64_t b = 0; b < n; b += per) {
        int64_t e = b + per < n ? b + per : n;
        queue_.emplace_back([&f, b, e, pending] {
          f(b, e);
          if (pending->count.fetch_sub(1) == 1) {
            std::unique_lock lk2(pending->mu);
            pending->cv.notify_all();
          }
        });
      }
    }
    cv_.notify_all();
    // caller helps drain the queue, then waits for stragglers
    drain();
    std::unique_lock lk(pending->mu);
    pending->cv.wait(lk, [&] { return pending->count.load() == 0; });
  }

 private:
  struct Latch {
    std::atomic<int> count{0};
    std::mutex mu;
    std::condition_variable cv;
  };

  void drain() {
    for (;;) {
      std::function<void()> job;
      {
        std::unique_lock lk(mu_);
        if (queue_.empty()) return;
        job = std::move(queue_.front());
        queue_.pop_front();
      }
      job();
    }
  }

  void worker_loop() {
    for (;;) {
      std::function<void()> job;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [this] { return stop_ || !queue_.empty(); });
        if (stop_ && queue_.empty()) return;
        job = std::move(queue_.front());
        queue_.pop_front();
      }
      job();
    }
  }

  int width_;
  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> queue_;
  bool stop_ = false;
};

inline int env_thread_cap() {
  int hw = int(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* s = std::getenv("DMAT_THREADS")) {
    int cap = std::atoi(s);
    if (cap >= 1) return cap;
  }
  return hw;
}

inline ThreadPool& global_pool() {
  static ThreadPool pool(env_thread_cap());
  return pool;
}

}  // namespace dmat
