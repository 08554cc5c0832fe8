#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace coreflect {

/// Runs fn(i) for i in [0, count) on at most `limit` threads. Once an item
/// throws, no new items start; the exception of the lowest failing index is
/// rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t count, int limit, Fn&& fn) {
  if (count == 0) return;
  const auto workers = static_cast<std::size_t>(std::max(1, limit));
  if (workers == 1 || count == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex mu;
  std::exception_ptr first_error;
  std::size_t first_index = count;

  auto worker = [&] {
    while (!stop.load()) {
      const auto i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < first_index) {
          first_index = i;
          first_error = std::current_exception();
        }
        stop.store(true);
      }
    }
  };
  {
    std::vector<std::jthread> threads;
    for (std::size_t w = 0; w < std::min(workers, count); ++w) threads.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace coreflect
