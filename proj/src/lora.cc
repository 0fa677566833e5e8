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

#include "deskllm/lora.h"

#include <cmath>

#include "deskllm/errors.h"
#include "deskllm/parallel.h"

namespace deskllm {
namespace {

// Flat views over every adapter parameter: A then B for each entry.
std::vector<float*> parameter_slots(LoraAdapter& adapter) {
  std::vector<float*> slots;
  for (auto& e : adapter.entries) {
    for (float& v : e.a.span()) slots.push_back(&v);
    for (float& v : e.b.span()) slots.push_back(&v);
  }
  return slots;
}

double log_softmax_at(std::span<const float> logits, TokenId target) {
  double max = logits[0];
  for (float v : logits) max = std::max(max, static_cast<double>(v));
  double sum = 0.0;
  for (float v : logits) sum += std::exp(static_cast<double>(v) - max);
  return static_cast<double>(logits[static_cast<std::size_t>(target)]) - max -
         std::log(sum);
}

}  // namespace

ModelWeights lora_merge(const ModelWeights& weights, const ModelConfig& config,
                        const LoraAdapter& adapter) {
  validate_adapter(adapter, config);
  ModelWeights out = weights;
  const float scale = adapter.scale();
  for (const auto& e : adapter.entries) {
    Projection& p = out.layers[e.target.layer][e.target.kind];
    if (p.is_quantized()) {
      throw AdapterError(e.target.name() +
                         ": cannot merge into a Q4 projection; dequantize first");
    }
    const Tensor delta = matmul(e.b, e.a);
    Tensor& w = p.dense();
    for (std::size_t i = 0; i < w.size(); ++i) {
      // Skipping exact zeros keeps -0.0 weights bit-identical.
      if (delta[i] != 0.0f) w[i] += scale * delta[i];
    }
  }
  return out;
}

std::vector<TuningExample> make_tuning_examples(
    const Model& model, std::span<const PromptResponsePair> pairs) {
  std::vector<TuningExample> out;
  out.reserve(pairs.size());
  for (const auto& pair : pairs) {
    TuningExample ex;
    ex.context.push_back(kBosId);
    const auto prompt = model.tokenizer.encode(pair.prompt);
    ex.context.insert(ex.context.end(), prompt.begin(), prompt.end());
    ex.response = model.tokenizer.encode(pair.response);
    if (ex.response.empty()) {
      throw ValidationError("pair " + std::to_string(pair.id) +
                            " has an empty response");
    }
    if (ex.context.size() + ex.response.size() > model.config.max_seq) {
      throw ValidationError("pair " + std::to_string(pair.id) +
                            " does not fit max_seq " +
                            std::to_string(model.config.max_seq));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

double response_loss(const Model& model, const LoraAdapter* adapter,
                     std::span<const TuningExample> examples) {
  double total = 0.0;
  std::size_t count = 0;
  KVCache cache(model.config);
  std::vector<TokenId> tokens;
  for (const auto& ex : examples) {
    tokens = ex.context;
    // The last response token is never an input.
    tokens.insert(tokens.end(), ex.response.begin(), ex.response.end() - 1);
    cache.clear();
    const Tensor logits =
        forward_all(model.weights, model.config, tokens, cache, adapter);
    for (std::size_t j = 0; j < ex.response.size(); ++j) {
      total -= log_softmax_at(logits.row(ex.context.size() - 1 + j),
                              ex.response[j]);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

FinetuneResult lora_finetune_fd(const Model& base, const LoraAdapter& init,
                                std::span<const PromptResponsePair> pairs,
                                const FinetuneOptions& options) {
  if (pairs.empty()) throw ValidationError("fine-tuning dataset is empty");
  validate_adapter(init, base.config);
  if (init.parameter_count() > options.max_parameters) {
    throw ValidationError("adapter has " +
                          std::to_string(init.parameter_count()) +
                          " parameters; finite-difference tuning is capped at " +
                          std::to_string(options.max_parameters));
  }
  if (!(options.fd_eps > 0.0f)) throw ValidationError("fd_eps must be positive");
  if (!std::isfinite(options.lr)) throw ValidationError("lr must be finite");
  const auto examples = make_tuning_examples(base, pairs);

  FinetuneResult result;
  result.adapter = init;
  LoraAdapter current = init;
  const std::size_t n_params = current.parameter_count();
  std::vector<double> grad(n_params);

  double loss = response_loss(base, &current, examples);
  for (std::size_t step = 0; step <= options.steps; ++step) {
    if (!std::isfinite(loss)) {
      result.diverged = true;
      return result;
    }
    result.adapter = current;
    result.loss_trace.push_back(loss);
    if (step == options.steps || options.lr == 0.0f) {
      if (options.lr == 0.0f) {
        result.loss_trace.resize(options.steps + 1, loss);
      }
      break;
    }

    parallel_for(n_params, 1 << 15, [&](std::size_t begin, std::size_t end) {
      LoraAdapter probe = current;
      auto slots = parameter_slots(probe);
      for (std::size_t i = begin; i < end; ++i) {
        const float original = *slots[i];
        const float hi = original + options.fd_eps;
        const float lo = original - options.fd_eps;
        *slots[i] = hi;
        const double plus = response_loss(base, &probe, examples);
        *slots[i] = lo;
        const double minus = response_loss(base, &probe, examples);
        *slots[i] = original;
        // Divide by the step actually taken after f32 rounding.
        grad[i] = (plus - minus) / (static_cast<double>(hi) - lo);
      }
    });

    auto slots = parameter_slots(current);
    for (std::size_t i = 0; i < n_params; ++i) {
      *slots[i] -= static_cast<float>(options.lr * grad[i]);
    }
    loss = response_loss(base, &current, examples);
  }
  return result;
}

}  // namespace deskllm
