#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace hctb {

// Fixed pool, blocking parallel_for over an index range. Work items must be
// independent and write only to their own output slot; the caller reduces
// sequentially afterwards, which keeps results invariant to thread count.
class ThreadPool {
 public:
  explicit ThreadPool(unsigned n_threads);
  ~ThreadPool();

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

  unsigned size() const { return static_cast<unsigned>(workers_.size()) + 1; }

 private:
  void worker_loop();

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_start_;
  std::condition_variable cv_done_;
  const std::function<void(std::size_t)>* body_ = nullptr;
  std::size_t n_ = 0;
  std::atomic<std::size_t> next_{0};
  std::size_t generation_ = 0;
  unsigned active_ = 0;
  bool stop_ = false;
};

// Thread count resolution: explicit request > HCTB_THREADS env > hardware.
unsigned resolve_threads(int requested);

}  // namespace hctb
