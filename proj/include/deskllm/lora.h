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

#ifndef DESKLLM_LORA_H_
#define DESKLLM_LORA_H_

#include <cstddef>
#include <span>
#include <vector>

#include "deskllm/model.h"
#include "deskllm/prompt_pair.h"

namespace deskllm {

// W' = W + (alpha / rank) * B * A on every target; all other tensors are
// copied bitwise. Targets must be f32 (dequantize Q4 weights first).
ModelWeights lora_merge(const ModelWeights& weights, const ModelConfig& config,
                        const LoraAdapter& adapter);

struct FinetuneOptions {
  std::size_t steps = 100;
  float lr = 0.05f;
  float fd_eps = 1e-3f;
  std::size_t max_parameters = 2048;
};

struct FinetuneResult {
  LoraAdapter adapter;
  // loss_trace[i] is the loss before step i; the last entry is the loss of
  // the returned adapter.
  std::vector<double> loss_trace;
  bool diverged = false;
};

// Tokenized training example: BOS + prompt are conditioned on, response
// tokens are scored.
struct TuningExample {
  std::vector<TokenId> context;
  std::vector<TokenId> response;
};

std::vector<TuningExample> make_tuning_examples(
    const Model& model, std::span<const PromptResponsePair> pairs);

// Mean next-token cross-entropy (nats) over all response tokens.
double response_loss(const Model& model, const LoraAdapter* adapter,
                     std::span<const TuningExample> examples);

// Central-difference gradient descent on the adapter parameters only. The
// base weights are never written. Throws ValidationError for an empty
// dataset, an oversized adapter, or examples that do not fit max_seq.
FinetuneResult lora_finetune_fd(const Model& base, const LoraAdapter& init,
                                std::span<const PromptResponsePair> pairs,
                                const FinetuneOptions& options);

}  // namespace deskllm

#endif  // DESKLLM_LORA_H_
