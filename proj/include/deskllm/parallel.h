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

#ifndef DESKLLM_PARALLEL_H_
#define DESKLLM_PARALLEL_H_

#include <cstddef>
#include <functional>

namespace deskllm {

// Number of workers used by parallel_for, including the calling thread.
// Defaults to the hardware concurrency. Changing it never changes results:
// all parallel kernels partition independent outputs only.
void set_worker_count(std::size_t n);
std::size_t worker_count();

// Calls body(begin, end) over a partition of [0, n). Runs serially when the
// pool has one worker, when `n * cost_per_item` is below a small threshold,
// when called from inside another parallel_for, or when the pool is already
// busy serving another thread.
void parallel_for(std::size_t n, std::size_t cost_per_item,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace deskllm

#endif  // DESKLLM_PARALLEL_H_
