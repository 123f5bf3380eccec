#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

namespace malab {

/// Worker count used when a caller passes 0.
inline unsigned default_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

/// Runs work(i) for i in [0, n) on up to `threads` workers, handing out
/// indices in increasing order. The first exception thrown is rethrown.
template <class Work>
void parallel_for(std::size_t n, unsigned threads, Work&& work) {
  if (threads == 0) threads = default_threads();
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        work(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(run);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// Combines per-block results in a fixed binary tree keyed only by block
/// index, so the floating-point result does not depend on which worker
/// finished first. Blocks may be pushed in any order.
template <class T, class Merge>
class OrderedReducer {
 public:
  explicit OrderedReducer(Merge merge) : merge_(std::move(merge)) {}

  void push(std::size_t index, T value) {
    std::lock_guard lock(mutex_);
    if (index >= ready_.size()) ready_.resize(index + 1);
    ready_[index] = std::move(value);
    have_.resize(ready_.size(), false);
    have_[index] = true;
    while (next_ < have_.size() && have_[next_]) {
      fold(std::move(*ready_[next_]));
      ready_[next_].reset();
      ++next_;
    }
  }

  /// Result after all blocks 0..n-1 have been pushed.
  T finish() {
    std::lock_guard lock(mutex_);
    while (stack_.size() > 1) {
      auto right = std::move(stack_.back());
      stack_.pop_back();
      merge_(stack_.back().value, right.value);
    }
    return std::move(stack_.front().value);
  }

 private:
  struct Node {
    T value;
    int level;
  };
  void fold(T value) {
    stack_.push_back({std::move(value), 0});
    while (stack_.size() >= 2 && stack_[stack_.size() - 1].level == stack_[stack_.size() - 2].level) {
      auto right = std::move(stack_.back());
      stack_.pop_back();
      merge_(stack_.back().value, right.value);
      ++stack_.back().level;
    }
  }

  Merge merge_;
  std::mutex mutex_;
  std::vector<std::optional<T>> ready_;
  std::vector<bool> have_;
  std::size_t next_ = 0;
  std::vector<Node> stack_;
};

}  // namespace malab
