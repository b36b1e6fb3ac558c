#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mlmc {

/// Worker-count setting passed down to every sampling routine. Results never
/// depend on it.
struct Execution {
  int threads = 0;  ///< 0 = hardware concurrency

  int resolved() const {
    if (threads > 0) return threads;
    return std::max(1u, std::thread::hardware_concurrency());
  }
};

/// Samples are processed in blocks of this many replicates; each block is
/// accumulated sequentially and blocks are merged in index order.
inline constexpr std::size_t kSampleBlock = 1024;

/// Calls task(i) for i in [0, n_tasks) on up to exec.resolved() threads.
/// The first exception thrown by any task is rethrown after all workers join.
template <class Task>
void parallel_for(std::size_t n_tasks, const Execution& exec, Task&& task) {
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(exec.resolved()), n_tasks);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n_tasks; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n_tasks) return;
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n_tasks);
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace mlmc
