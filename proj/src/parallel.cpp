#include "anatomatch/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace anatomatch {
namespace {
std::atomic<int> g_threads{0};
// Set on worker threads so nested parallel calls run inline.
thread_local bool t_in_parallel = false;
}

void set_thread_count(int n) { g_threads.store(n < 0 ? 0 : n); }

int thread_count() {
  const int n = g_threads.load();
  if (n > 0) return n;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_chunks(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& body) {
  if (n <= 0) return;
  grain = std::max<int64_t>(grain, 1);
  const int64_t chunks = (n + grain - 1) / grain;
  const int workers = static_cast<int>(std::min<int64_t>(thread_count(), chunks));
  if (workers <= 1 || t_in_parallel) {
    for (int64_t c = 0; c < chunks; ++c) body(c * grain, std::min(n, (c + 1) * grain));
    return;
  }

  std::atomic<int64_t> next{0};
  std::mutex err_mu;
  int64_t err_chunk = chunks;
  std::exception_ptr err;

  auto run = [&] {
    const bool outer = t_in_parallel;
    t_in_parallel = true;
    for (;;) {
      const int64_t c = next.fetch_add(1);
      if (c >= chunks) break;
      try {
        body(c * grain, std::min(n, (c + 1) * grain));
      } catch (...) {
        std::lock_guard lock(err_mu);
        // Report the failure a serial run would have hit first.
        if (c < err_chunk) {
          err_chunk = c;
          err = std::current_exception();
        }
      }
    }
    t_in_parallel = outer;
  };

  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& body) {
  parallel_chunks(n, 1, [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) body(i);
  });
}

}  // namespace anatomatch
