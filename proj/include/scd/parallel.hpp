#pragma once

// Fixed-block parallel loops. Work is cut into blocks whose boundaries depend
// only on the problem size, never on the worker count, so block-wise partial
// results reduced in block order are identical for any number of threads.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace scd::parallel {

namespace detail {
inline std::atomic<std::size_t>& thread_setting() {
  static std::atomic<std::size_t> value{0};
  return value;
}
}  // namespace detail

/// Worker count used by all parallel kernels. 0 (the default) means
/// SCD_NUM_THREADS from the environment, else hardware concurrency.
inline void set_num_threads(std::size_t n) { detail::thread_setting().store(n); }

inline std::size_t num_threads() {
  std::size_t n = detail::thread_setting().load();
  if (n != 0) return n;
  if (const char* env = std::getenv("SCD_NUM_THREADS")) {
    long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Calls body(block_index) for every block in [0, n_blocks) using up to
/// num_threads() workers. Blocks are claimed dynamically; the first exception
/// thrown by any block is rethrown on the calling thread.
template <typename Body>
void for_each_block(std::size_t n_blocks, Body&& body) {
  const std::size_t workers = std::min(num_threads(), n_blocks);
  if (workers <= 1) {
    for (std::size_t b = 0; b < n_blocks; ++b) body(b);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    for (;;) {
      std::size_t b = next.fetch_add(1);
      if (b >= n_blocks) return;
      try {
        body(b);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n_blocks);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(run);
  run();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

/// Range [begin, end) of block b when n items are cut into blocks of block_size.
struct BlockRange {
  std::size_t begin;
  std::size_t end;
};

inline std::size_t block_count(std::size_t n, std::size_t block_size) {
  return (n + block_size - 1) / block_size;
}

inline BlockRange block_range(std::size_t n, std::size_t block_size, std::size_t b) {
  std::size_t begin = b * block_size;
  return {begin, std::min(n, begin + block_size)};
}

/// Runs body(begin, end) over fixed blocks of [0, n).
template <typename Body>
void for_range(std::size_t n, std::size_t block_size, Body&& body) {
  const std::size_t blocks = block_count(n, block_size);
  for_each_block(blocks, [&](std::size_t b) {
    auto r = block_range(n, block_size, b);
    body(r.begin, r.end);
  });
}

}  // namespace scd::parallel
