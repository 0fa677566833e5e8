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

#include "deskllm/generate.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "deskllm/errors.h"

namespace deskllm {
namespace {

TokenId argmax(std::span<const float> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

}  // namespace

void SamplerParams::validate() const {
  if (!std::isfinite(temperature) || temperature < 0.0f) {
    throw ValidationError("temperature: must be >= 0");
  }
  if (!std::isfinite(top_p) || !(top_p > 0.0f) || top_p > 1.0f) {
    throw ValidationError("top_p: must be in (0, 1]");
  }
  if (!std::isfinite(repetition_penalty) || repetition_penalty < 1.0f) {
    throw ValidationError("repetition_penalty: must be >= 1");
  }
}

SamplingCandidates sampling_candidates(std::span<const float> logits,
                                       const SamplerParams& params,
                                       std::span<const TokenId> history) {
  if (logits.empty()) throw DimensionError("sampling from empty logits");
  std::vector<float> work(logits.begin(), logits.end());

  if (params.repetition_penalty != 1.0f) {
    std::unordered_set<TokenId> seen(history.begin(), history.end());
    for (TokenId id : seen) {
      if (id < 0 || static_cast<std::size_t>(id) >= work.size()) continue;
      float& l = work[static_cast<std::size_t>(id)];
      l = l > 0.0f ? l / params.repetition_penalty : l * params.repetition_penalty;
    }
  }

  SamplingCandidates out;
  if (params.temperature == 0.0f) {
    out.ids.push_back(argmax(work));
    out.probs.push_back(1.0);
    return out;
  }
  for (float& l : work) l /= params.temperature;

  std::vector<TokenId> order(work.size());
  std::iota(order.begin(), order.end(), 0);
  auto by_logit = [&](TokenId a, TokenId b) {
    const float la = work[static_cast<std::size_t>(a)];
    const float lb = work[static_cast<std::size_t>(b)];
    return la != lb ? la > lb : a < b;
  };
  std::size_t keep = order.size();
  if (params.top_k > 0 && params.top_k < order.size()) {
    keep = params.top_k;
    std::partial_sort(order.begin(), order.begin() + keep, order.end(), by_logit);
    order.resize(keep);
  } else {
    std::sort(order.begin(), order.end(), by_logit);
  }

  const double max = work[static_cast<std::size_t>(order[0])];
  std::vector<double> weights(order.size());
  double total = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    weights[i] = std::exp(static_cast<double>(work[static_cast<std::size_t>(order[i])]) - max);
    total += weights[i];
  }

  if (params.top_p < 1.0f) {
    double cumulative = 0.0;
    std::size_t prefix = order.size();
    for (std::size_t i = 0; i < order.size(); ++i) {
      cumulative += weights[i] / total;
      if (cumulative >= params.top_p) {
        prefix = i + 1;
        break;
      }
    }
    order.resize(prefix);
    weights.resize(prefix);
    total = std::accumulate(weights.begin(), weights.end(), 0.0);
  }

  out.ids = std::move(order);
  out.probs.resize(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) out.probs[i] = weights[i] / total;
  return out;
}

TokenId sample(std::span<const float> logits, const SamplerParams& params,
               std::span<const TokenId> history, std::mt19937_64& rng) {
  const SamplingCandidates c = sampling_candidates(logits, params, history);
  if (c.ids.size() == 1) return c.ids[0];
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double cumulative = 0.0;
  for (std::size_t i = 0; i < c.ids.size(); ++i) {
    cumulative += c.probs[i];
    if (u < cumulative) return c.ids[i];
  }
  return c.ids.back();
}

const char* finish_reason_name(FinishReason reason) {
  switch (reason) {
    case FinishReason::kStopToken: return "stop_token";
    case FinishReason::kMaxTokens: return "max_tokens";
    case FinishReason::kCancelled: return "cancelled";
  }
  return "unknown";
}

GenerationResult generate(const Model& model, std::string_view prompt,
                          const SamplerParams& params,
                          const TokenCallback& on_token,
                          const GenerateOptions& options) {
  params.validate();
  GenerationResult result;
  std::vector<TokenId> context{kBosId};
  const auto prompt_ids = model.tokenizer.encode(prompt);
  context.insert(context.end(), prompt_ids.begin(), prompt_ids.end());
  result.prompt_tokens = context.size();
  if (context.size() + params.max_tokens > model.config.max_seq) {
    throw ContextOverflowError(
        "context overflow: prompt needs " + std::to_string(context.size()) +
        " tokens plus max_tokens " + std::to_string(params.max_tokens) +
        ", max_seq is " + std::to_string(model.config.max_seq));
  }
  if (params.max_tokens == 0) {
    result.finish_reason = FinishReason::kMaxTokens;
    return result;
  }

  // Ids the tokenizer cannot decode are never sampled.
  const std::size_t n_sampleable =
      std::min<std::size_t>(model.tokenizer.vocab_size(), model.config.vocab_size);
  std::mt19937_64 rng(params.seed);
  KVCache cache(model.config);
  Utf8StreamDecoder utf8;
  Tensor logits =
      forward(model.weights, model.config, context, cache, options.adapter);

  for (;;) {
    if (options.cancel != nullptr && options.cancel->load()) {
      result.finish_reason = FinishReason::kCancelled;
      break;
    }
    const TokenId next = sample(logits.span().first(n_sampleable), params,
                                result.token_ids, rng);
    result.token_ids.push_back(next);
    const bool is_stop = std::find(params.stop_ids.begin(), params.stop_ids.end(),
                                   next) != params.stop_ids.end();
    const bool at_limit = result.token_ids.size() >= params.max_tokens;

    std::string fragment = utf8.feed(model.tokenizer.token_bytes(next));
    if (is_stop || at_limit) fragment += utf8.finish();
    result.text += fragment;

    bool keep_going = true;
    if (on_token) {
      try {
        keep_going = on_token(next, fragment);
      } catch (...) {
        keep_going = false;
      }
    }
    if (!keep_going) {
      result.finish_reason = FinishReason::kCancelled;
      break;
    }
    if (is_stop) {
      result.finish_reason = FinishReason::kStopToken;
      break;
    }
    if (at_limit) {
      result.finish_reason = FinishReason::kMaxTokens;
      break;
    }
    const TokenId step[1] = {next};
    logits = forward(model.weights, model.config, step, cache, options.adapter);
  }
  if (result.finish_reason == FinishReason::kCancelled) result.text += utf8.finish();
  return result;
}

std::string apply_chat_template(std::span<const ChatTurn> history,
                                std::string_view user) {
  std::string out;
  for (const auto& turn : history) {
    out += "### Prompt:\n" + turn.user + "\n### Response:\n" + turn.assistant + "\n";
  }
  out += "### Prompt:\n";
  out += user;
  out += "\n### Response:\n";
  return out;
}

}  // namespace deskllm
