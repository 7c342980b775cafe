#ifndef FIRN_PARALLEL_HPP
#define FIRN_PARALLEL_HPP

#include <condition_variable>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace firn {

// Fork-join helper with a fixed block partition, so the set of indices each
// worker touches depends only on (n, thread count).  Callers must write to
// disjoint preallocated slots; under that contract results are bit-identical
// for every thread count, including 1 (which runs inline).
class ThreadPool {
 public:
  explicit ThreadPool(int n_threads) {
    const int extra = n_threads > 1 ? n_threads - 1 : 0;
    workers_.reserve(static_cast<std::size_t>(extra));
    for (int t = 0; t < extra; ++t)
      workers_.emplace_back([this, t] { worker_loop(t + 1); });
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  int size() const { return static_cast<int>(workers_.size()) + 1; }

  void for_index(long n, const std::function<void(long)>& fn) {
    if (n <= 0) return;
    if (workers_.empty()) {
      for (long i = 0; i < n; ++i) fn(i);
      return;
    }
    {
      std::lock_guard<std::mutex> lk(mu_);
      fn_ = &fn;
      n_ = n;
      pending_ = static_cast<long>(workers_.size());
      first_error_ = nullptr;
      ++job_;
    }
    cv_.notify_all();
    run_chunk(0);
    std::unique_lock<std::mutex> lk(mu_);
    done_cv_.wait(lk, [this] { return pending_ == 0; });
    fn_ = nullptr;
    if (first_error_) std::rethrow_exception(first_error_);
  }

 private:
  void worker_loop(int chunk) {
    long seen = 0;
    for (;;) {
      std::unique_lock<std::mutex> lk(mu_);
      cv_.wait(lk, [this, seen] { return stop_ || job_ != seen; });
      if (stop_) return;
      seen = job_;
      lk.unlock();
      run_chunk(chunk);
      lk.lock();
      if (--pending_ == 0) done_cv_.notify_one();
    }
  }

  void run_chunk(int chunk) {
    const long t = size();
    const long lo = n_ * chunk / t;
    const long hi = n_ * (chunk + 1) / t;
    try {
      for (long i = lo; i < hi; ++i) (*fn_)(i);
    } catch (...) {
      std::lock_guard<std::mutex> lk(mu_);
      if (!first_error_) first_error_ = std::current_exception();
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(long)>* fn_ = nullptr;
  long n_ = 0;
  long job_ = 0;
  long pending_ = 0;
  bool stop_ = false;
  std::exception_ptr first_error_;
};

}  // namespace firn

#endif
