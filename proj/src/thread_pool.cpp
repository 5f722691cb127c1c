#include "fssd/thread_pool.hpp"

#include <cstdlib>

namespace fssd {

static int configured_threads() {
  if (const char* env = std::getenv("FSSD_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

ThreadPool& ThreadPool::instance() {
  static ThreadPool pool;
  return pool;
}

ThreadPool::ThreadPool() {
  int n = configured_threads();
  for (int i = 1; i < n; ++i) workers_.emplace_back([this] { worker_loop(); });
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    stop_ = true;
  }
  wake_.notify_all();
  for (auto& w : workers_) w.join();
}

void ThreadPool::worker_loop() {
  std::uint64_t seen = 0;
  while (true) {
    std::unique_lock<std::mutex> lock(mutex_);
    wake_.wait(lock, [&] { return stop_ || generation_ != seen; });
    if (stop_) return;
    seen = generation_;
    while (next_task_ < job_count_) {
      int task = next_task_++;
      lock.unlock();
      (*job_)(task);
      lock.lock();
    }
    if (--active_ == 0) done_.notify_all();
  }
}

void ThreadPool::run(int count, const std::function<void(int)>& fn) {
  if (count <= 0) return;
  if (workers_.empty() || count == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::unique_lock<std::mutex> lock(mutex_);
  job_ = &fn;
  job_count_ = count;
  next_task_ = 0;
  active_ = static_cast<int>(workers_.size());
  ++generation_;
  wake_.notify_all();
  // The calling thread chips in as well.
  while (next_task_ < job_count_) {
    int task = next_task_++;
    lock.unlock();
    fn(task);
    lock.lock();
  }
  done_.wait(lock, [&] { return active_ == 0; });
  job_ = nullptr;
}

void parallel_for(int count, const std::function<void(int)>& fn) {
  ThreadPool::instance().run(count, fn);
}

}  // namespace fssd
