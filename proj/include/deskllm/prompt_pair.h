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

#ifndef DESKLLM_PROMPT_PAIR_H_
#define DESKLLM_PROMPT_PAIR_H_

#include <cstdint>
#include <string>

namespace deskllm {

// One prompt-response record. `id` is the record's ordinal in its input.
struct PromptResponsePair {
  std::string prompt;
  std::string response;
  std::string source;
  std::uint64_t id = 0;

  bool operator==(const PromptResponsePair&) const = default;
};

}  // namespace deskllm

#endif  // DESKLLM_PROMPT_PAIR_H_
