// Copyright 2026 The deskllm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "deskllm/parallel.h"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace deskllm {
namespace {

constexpr std::size_t kMinParallelWork = 1 << 15;

thread_local bool tls_inside_parallel = false;

class WorkerPool {
 public:
  explicit WorkerPool(std::size_t n_workers) {
    for (std::size_t i = 1; i < n_workers; ++i) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  ~WorkerPool() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
    }
    wake_.notify_all();
    for (auto& t : threads_) t.join();
  }

  std::size_t size() const { return threads_.size() + 1; }

  // Returns false without running anything when another thread owns the pool.
  bool try_run(std::size_t n_tasks,
               const std::function<void(std::size_t)>& task) {
    std::unique_lock<std::mutex> owner(run_mu_, std::try_to_lock);
    if (!owner.owns_lock()) return false;
    auto run = std::make_shared<Run>();
    run->task = &task;
    run->n_tasks = n_tasks;
    run->pending = n_tasks;
    {
      std::lock_guard<std::mutex> lock(mu_);
      current_ = run;
      ++generation_;
    }
    wake_.notify_all();
    drain(*run);
    std::unique_lock<std::mutex> lock(mu_);
    done_.wait(lock, [&] { return run->pending == 0; });
    current_.reset();
    return true;
  }

 private:
  struct Run {
    const std::function<void(std::size_t)>* task = nullptr;
    std::size_t n_tasks = 0;
    std::atomic<std::size_t> next{0};
    std::size_t pending = 0;  // guarded by mu_
  };

  void drain(Run& run) {
    tls_inside_parallel = true;
    std::size_t finished = 0;
    for (;;) {
      const std::size_t i = run.next.fetch_add(1);
      if (i >= run.n_tasks) break;
      (*run.task)(i);
      ++finished;
    }
    tls_inside_parallel = false;
    if (finished > 0) {
      std::lock_guard<std::mutex> lock(mu_);
      run.pending -= finished;
      if (run.pending == 0) done_.notify_all();
    }
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      std::shared_ptr<Run> run;
      {
        std::unique_lock<std::mutex> lock(mu_);
        wake_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        run = current_;
      }
      if (run) drain(*run);
    }
  }

  std::vector<std::thread> threads_;
  std::mutex run_mu_;
  std::mutex mu_;
  std::condition_variable wake_;
  std::condition_variable done_;
  std::shared_ptr<Run> current_;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

std::mutex g_pool_mu;
std::shared_ptr<WorkerPool> g_pool;
std::size_t g_worker_count = 0;

std::size_t default_workers() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

std::shared_ptr<WorkerPool> current_pool() {
  std::lock_guard<std::mutex> lock(g_pool_mu);
  if (g_worker_count == 0) g_worker_count = default_workers();
  if (!g_pool || g_pool->size() != g_worker_count) {
    g_pool = std::make_shared<WorkerPool>(g_worker_count);
  }
  return g_pool;
}

}  // namespace

void set_worker_count(std::size_t n) {
  std::lock_guard<std::mutex> lock(g_pool_mu);
  g_worker_count = std::max<std::size_t>(n, 1);
}

std::size_t worker_count() {
  std::lock_guard<std::mutex> lock(g_pool_mu);
  if (g_worker_count == 0) g_worker_count = default_workers();
  return g_worker_count;
}

void parallel_for(std::size_t n, std::size_t cost_per_item,
                  const std::function<void(std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  const std::size_t workers = worker_count();
  if (workers == 1 || n < 2 || tls_inside_parallel ||
      n * std::max<std::size_t>(cost_per_item, 1) < kMinParallelWork) {
    body(0, n);
    return;
  }
  const std::size_t n_chunks = std::min(n, workers * 4);
  const std::size_t chunk = (n + n_chunks - 1) / n_chunks;
  const std::size_t n_tasks = (n + chunk - 1) / chunk;
  const std::function<void(std::size_t)> task = [&](std::size_t t) {
    const std::size_t begin = t * chunk;
    body(begin, std::min(n, begin + chunk));
  };
  auto pool = current_pool();
  if (!pool->try_run(n_tasks, task)) body(0, n);
}

}  // namespace deskllm
