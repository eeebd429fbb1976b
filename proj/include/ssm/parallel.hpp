#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace ssm {

/// Worker count from SSM_WORKERS, falling back to the hardware concurrency.
int default_workers();

/// Runs fn(chunk_index, begin, end) over `workers` contiguous chunks of [0, n).
/// Chunk 0 runs on the calling thread. Exceptions from workers are rethrown.
template <class Fn>
void parallel_chunks(int workers, int n, Fn&& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    if (n > 0) fn(0, 0, n);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  threads.reserve(workers - 1);
  auto bounds = [&](int c) { return std::pair<int, int>{static_cast<int>(static_cast<long>(n) * c / workers),
                                                        static_cast<int>(static_cast<long>(n) * (c + 1) / workers)}; };
  for (int c = 1; c < workers; ++c) {
    threads.emplace_back([&, c] {
      try {
        auto [b, e] = bounds(c);
        fn(c, b, e);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  try {
    auto [b, e] = bounds(0);
    fn(0, b, e);
  } catch (...) {
    errors[0] = std::current_exception();
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace ssm
