#pragma once

#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace fssd {

// Persistent worker pool for the hot kernels. Work is partitioned into indexed
// tasks; each task writes a disjoint output region and runs its loops in a fixed
// order, so results are bitwise independent of scheduling and of the pool size.
class ThreadPool {
 public:
  static ThreadPool& instance();

  // Runs fn(0..count-1), blocking until all tasks finish. Must not be nested.
  void run(int count, const std::function<void(int)>& fn);

  int worker_count() const { return static_cast<int>(workers_.size()) + 1; }

  ~ThreadPool();

 private:
  ThreadPool();

  void worker_loop();

  std::vector<std::thread> workers_;
  std::mutex mutex_;
  std::condition_variable wake_;
  std::condition_variable done_;
  const std::function<void(int)>* job_ = nullptr;
  int job_count_ = 0;
  int next_task_ = 0;
  int active_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

// Convenience wrapper around the singleton.
void parallel_for(int count, const std::function<void(int)>& fn);

}  // namespace fssd
