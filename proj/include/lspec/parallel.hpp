#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace lspec {

// Worker cap from LATENT_SPECTRA_THREADS (0 or unset = hardware concurrency).
inline int worker_count() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  const char* env = std::getenv("LATENT_SPECTRA_THREADS");
  if (env == nullptr || *env == '\0') return hw;
  long v = std::strtol(env, nullptr, 10);
  if (v <= 0) return hw;
  return static_cast<int>(std::min<long>(v, hw));
}

// Runs fn(i) for i in [0, n). Work items must write to disjoint state so the
// result is identical for any worker count.
inline void parallel_for(long n, const std::function<void(long)>& fn) {
  if (n <= 0) return;
  int workers = std::min<long>(worker_count(), n);
  if (workers <= 1) {
    for (long i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int k = 0; k < workers; ++k) {
    pool.emplace_back([&, k]() {
      for (long i = k; i < n; i += workers) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace lspec
