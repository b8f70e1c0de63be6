#pragma once

// Index-parallel loops capped by the SSKAN_THREADS environment variable.
// Each index writes only its own output slot, so results do not depend on
// the thread count.

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string_view>
#include <thread>
#include <vector>

#include "sskan/error.hpp"

namespace sskan {

// Thread cap from SSKAN_THREADS; unset means the hardware concurrency.
inline std::size_t thread_limit() {
  const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  const char* env = std::getenv("SSKAN_THREADS");
  if (env == nullptr || *env == '\0') return hw;
  const std::string_view s(env);
  std::size_t n = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), n);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size() && n >= 1, "invalid-config",
          "SSKAN_THREADS must be a positive integer");
  return n;
}

// Calls fn(i) for i in [0, n) on up to `threads` workers in contiguous
// blocks. The first exception thrown by any worker is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t threads = thread_limit()) {
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t block = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * block, hi = std::min(n, lo + block);
    pool.emplace_back([&, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!first) first = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

}  // namespace sskan
