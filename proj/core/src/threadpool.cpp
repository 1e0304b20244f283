#include "rccm/threadpool.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace rccm {
namespace {

int env_thread_cap() {
  if (const char* env = std::getenv("RCCM_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return 0;
}

int default_threads() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  int cap = env_thread_cap();
  if (cap >= 1) hw = std::min(hw, cap);
  return hw;
}

int g_override = 0;

// Persistent pool; workers sleep between jobs. One job at a time, issued from
// the single training/inference thread.
class Pool {
 public:
  explicit Pool(int workers) : want_(workers) {
    for (int i = 1; i < workers; ++i) {
      threads_.emplace_back([this, i] { worker_loop(i); });
    }
  }

  ~Pool() {
    {
      std::unique_lock<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  int width() const { return want_; }

  void run(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    const int parts = want_;
    job_ = &fn;
    job_n_ = n;
    job_parts_ = parts;
    pending_.store(parts - 1, std::memory_order_release);
    {
      std::unique_lock<std::mutex> lk(mu_);
      ++epoch_;
    }
    cv_.notify_all();
    run_chunk(0);
    while (pending_.load(std::memory_order_acquire) != 0) std::this_thread::yield();
    job_ = nullptr;
  }

 private:
  void run_chunk(int part) {
    const int64_t chunk = (job_n_ + job_parts_ - 1) / job_parts_;
    const int64_t b = std::min<int64_t>(job_n_, chunk * part);
    const int64_t e = std::min<int64_t>(job_n_, b + chunk);
    if (b < e) (*job_)(b, e);
  }

  void worker_loop(int part) {
    uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || epoch_ != seen; });
        if (stop_) return;
        seen = epoch_;
      }
      run_chunk(part);
      pending_.fetch_sub(1, std::memory_order_acq_rel);
    }
  }

  int want_;
  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_;
  uint64_t epoch_ = 0;
  bool stop_ = false;
  std::atomic<int> pending_{0};
  const std::function<void(int64_t, int64_t)>* job_ = nullptr;
  int64_t job_n_ = 0;
  int job_parts_ = 1;
};

Pool& pool() {
  static Pool p(g_override >= 1 ? g_override : default_threads());
  return p;
}

}  // namespace

int worker_threads() { return pool().width(); }

void set_worker_threads(int n) { g_override = n; }

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  Pool& p = pool();
  if (p.width() <= 1 || n < 128) {
    fn(0, n);
    return;
  }
  p.run(n, fn);
}

}  // namespace rccm
