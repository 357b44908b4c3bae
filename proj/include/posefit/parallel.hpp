#pragma once

// Deterministic fork-join helper: n items split into contiguous chunks, one
// per worker. Item i is always processed with the same arguments regardless
// of worker count, so bit-identical results only require fn(i) itself to be
// independent of scheduling (write to slot i, no shared mutable state).

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace posefit {

template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  if (n == 0) return;
  if (workers <= 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::size_t w = std::min<std::size_t>(workers, n);
  std::size_t chunk = (n + w - 1) / w;
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(w);
  threads.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    std::size_t begin = t * chunk;
    std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&, t, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (std::thread& th : threads) th.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace posefit
