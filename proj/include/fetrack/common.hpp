#pragma once

// Error taxonomy and the worker-pool primitive shared by every module.
//
// Error classes map onto process exit codes at the CLI boundary:
//   DimensionError / ValueError / ConfigError -> 1 (validation)
//   IoError                                   -> 2 (I/O)
//   NumericError                              -> 3 (non-finite numerics)

#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace fetrack {

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ValueError : std::domain_error {
  using std::domain_error::domain_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define FETRACK_CHECK_DIM(cond, msg) \
  do {                               \
    if (!(cond)) throw ::fetrack::DimensionError(msg); \
  } while (0)

#define FETRACK_CHECK_VALUE(cond, msg) \
  do {                                 \
    if (!(cond)) throw ::fetrack::ValueError(msg); \
  } while (0)

inline std::atomic<int>& worker_count_storage() {
  static std::atomic<int> n{1};
  return n;
}

inline void set_workers(int n) {
  if (n < 1) throw ConfigError("workers must be >= 1");
  worker_count_storage().store(n);
}

inline int workers() { return worker_count_storage().load(); }

// Splits [0, n) into contiguous chunks, one per worker. Each index is written
// by exactly one worker, so results are identical for any worker count.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
  const int nw = workers();
  if (nw <= 1 || n <= 1) {
    fn(std::int64_t(0), n);
    return;
  }
  const int use = static_cast<int>(std::min<std::int64_t>(nw, n));
  const std::int64_t chunk = (n + use - 1) / use;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(use - 1));
  for (int w = 1; w < use; ++w) {
    const std::int64_t lo = w * chunk;
    const std::int64_t hi = std::min<std::int64_t>(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  fn(std::int64_t(0), std::min<std::int64_t>(n, chunk));
  for (auto& t : pool) t.join();
}

}  // namespace fetrack
