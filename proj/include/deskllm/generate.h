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

#ifndef DESKLLM_GENERATE_H_
#define DESKLLM_GENERATE_H_

#include <atomic>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deskllm/model.h"

namespace deskllm {

struct SamplerParams {
  float temperature = 0.0f;        // 0 => greedy
  std::uint32_t top_k = 0;         // 0 => disabled
  float top_p = 1.0f;              // 1 => disabled
  float repetition_penalty = 1.0f;
  std::uint64_t seed = 0;
  std::uint32_t max_tokens = 128;
  std::vector<TokenId> stop_ids = {kEosId};

  // Throws ValidationError naming the field.
  void validate() const;
};

// Candidate set left after penalty, temperature, top-k and top-p, with its
// renormalized probabilities, in descending-logit order (ties: lower id).
struct SamplingCandidates {
  std::vector<TokenId> ids;
  std::vector<double> probs;
};

// Steps 1-4 of the sampling pipeline. With temperature 0 the result is the
// single argmax token.
SamplingCandidates sampling_candidates(std::span<const float> logits,
                                       const SamplerParams& params,
                                       std::span<const TokenId> history);

// Full pipeline: repetition penalty, temperature (0 => argmax, lowest index
// on ties), top-k, top-p, then a draw from the renormalized distribution.
TokenId sample(std::span<const float> logits, const SamplerParams& params,
               std::span<const TokenId> history, std::mt19937_64& rng);

enum class FinishReason { kStopToken, kMaxTokens, kCancelled };
const char* finish_reason_name(FinishReason reason);

struct GenerationResult {
  std::string text;
  std::vector<TokenId> token_ids;
  FinishReason finish_reason = FinishReason::kMaxTokens;
  std::size_t prompt_tokens = 0;
};

// Receives each generated token and its text fragment. Fragments hold back
// incomplete UTF-8 sequences, so their concatenation equals the final text
// of every generation that is not cancelled. Returning false (or throwing)
// cancels the generation.
using TokenCallback = std::function<bool(TokenId, std::string_view)>;

struct GenerateOptions {
  const LoraAdapter* adapter = nullptr;
  const std::atomic<bool>* cancel = nullptr;  // polled once per token
};

// BOS + prompt are primed through a fresh KV cache, then tokens are sampled
// until a stop id, max_tokens, or cancellation. Throws ContextOverflowError
// when the prompt plus max_tokens does not fit max_seq.
GenerationResult generate(const Model& model, std::string_view prompt,
                          const SamplerParams& params,
                          const TokenCallback& on_token = {},
                          const GenerateOptions& options = {});

// `### Prompt:\n{user}\n### Response:\n`, repeated per turn.
struct ChatTurn {
  std::string user;
  std::string assistant;
};
std::string apply_chat_template(std::span<const ChatTurn> history,
                                std::string_view user);

}  // namespace deskllm

#endif  // DESKLLM_GENERATE_H_
