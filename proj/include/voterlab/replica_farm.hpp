#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "voterlab/rng.hpp"

namespace voterlab {

// Deterministic source of per-replica random streams. A replica's stream
// depends only on (seed, experiment, replica), never on which worker runs it.
struct StreamSource {
  std::uint64_t seed = 0;
  std::uint64_t experiment = 0;

  Xoshiro256 at(std::uint64_t replica) const { return make_stream(seed, experiment, replica); }

  // Independent source for a sub-experiment (e.g. one point of a t-grid).
  StreamSource child(std::uint64_t index) const {
    return {seed, splitmix64(experiment ^ splitmix64(index + 0x5bd1e995ULL))};
  }
};

struct RunOptions {
  std::size_t workers = 1;
  std::uint64_t jump_budget = 0;  // dual samples only; 0 = unlimited
};

// Default worker count: $VOTERLAB_WORKERS, else 1.
inline std::size_t default_workers() {
  if (const char* env = std::getenv("VOTERLAB_WORKERS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

// Runs fn(i) for i in [0, count) on a fixed pool and returns the results in
// index order. Reductions over the returned vector are therefore independent
// of the worker count and completion order.
template <typename Result, typename Fn>
std::vector<Result> map_replicas(std::size_t count, std::size_t workers, Fn&& fn) {
  std::vector<Result> results(count);
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) results[i] = fn(i);
    return results;
  }

  constexpr std::size_t kChunk = 16;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto body = [&] {
    for (;;) {
      const std::size_t lo = next.fetch_add(kChunk);
      if (lo >= count) return;
      const std::size_t hi = std::min(count, lo + kChunk);
      try {
        for (std::size_t i = lo; i < hi; ++i) results[i] = fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return results;
}

}  // namespace voterlab
