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

#include <map>
#include <random>

#include <gtest/gtest.h>

#include "deskllm/errors.h"
#include "deskllm/parallel.h"
#include "test_util.h"

namespace deskllm {
namespace {

using testing::random_model;
using testing::tiny_config;

SamplerParams greedy(std::uint32_t max_tokens) {
  SamplerParams p;
  p.max_tokens = max_tokens;
  p.stop_ids = {};
  return p;
}

TEST(Sample, GreedyArgmax) {
  std::mt19937_64 rng(0);
  const std::vector<float> logits = {1, 3, 2};
  EXPECT_EQ(sample(logits, SamplerParams{}, {}, rng), 1);
  for (float s : {0.01f, 0.5f, 7.0f, 1000.0f}) {
    std::vector<float> scaled = {1 * s, 3 * s, 2 * s};
    EXPECT_EQ(sample(scaled, SamplerParams{}, {}, rng), 1);
  }
}

TEST(Sample, GreedyTieGoesToLowestIndex) {
  std::mt19937_64 rng(0);
  EXPECT_EQ(sample(std::vector<float>{2, 5, 5, 1}, SamplerParams{}, {}, rng), 1);
}

TEST(Sample, TopKExcludesSmallest) {
  SamplerParams p;
  p.temperature = 1.0f;
  p.top_k = 2;
  const std::vector<float> logits = {1, 3, 2};
  const auto cand = sampling_candidates(logits, p, {});
  EXPECT_EQ(cand.ids, (std::vector<TokenId>{1, 2}));
  std::mt19937_64 rng(42);
  std::map<TokenId, int> counts;
  for (int i = 0; i < 10000; ++i) ++counts[sample(logits, p, {}, rng)];
  EXPECT_EQ(counts[0], 0);
  // Empirical frequency of token 1 matches e/(1+e) within a loose bound.
  EXPECT_NEAR(counts[1] / 10000.0, std::exp(1.0) / (1.0 + std::exp(1.0)), 0.02);
}

TEST(Sample, TopPKeepsMinimalPrefix) {
  SamplerParams p;
  p.temperature = 1.0f;
  p.top_p = 0.5f;
  // Softmax of [ln 6, ln 3, ln 1] = [0.6, 0.3, 0.1].
  const std::vector<float> logits = {std::log(6.0f), std::log(3.0f), 0.0f};
  EXPECT_EQ(sampling_candidates(logits, p, {}).ids, (std::vector<TokenId>{0}));
  p.top_p = 0.8f;
  const auto two = sampling_candidates(logits, p, {});
  ASSERT_EQ(two.ids, (std::vector<TokenId>{0, 1}));
  EXPECT_NEAR(two.probs[0], 2.0 / 3.0, 1e-6);
  EXPECT_NEAR(two.probs[1], 1.0 / 3.0, 1e-6);
}

TEST(Sample, FullTopKAndTopPMatchTemperatureOnly) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> dist;
  std::vector<float> logits(50);
  for (float& v : logits) v = dist(rng);
  SamplerParams plain;
  plain.temperature = 0.7f;
  SamplerParams full = plain;
  full.top_k = 50;
  full.top_p = 1.0f;
  const auto a = sampling_candidates(logits, plain, {});
  const auto b = sampling_candidates(logits, full, {});
  EXPECT_EQ(a.ids, b.ids);
  EXPECT_EQ(a.probs, b.probs);
}

TEST(Sample, RepetitionPenalty) {
  SamplerParams p;
  p.repetition_penalty = 2.0f;
  std::mt19937_64 rng(0);
  // Token 1 (logit 3 -> 1.5) loses to token 2; negative logit 0 grows more negative.
  const std::vector<float> logits = {-1, 3, 2};
  const std::vector<TokenId> history = {1, 1, 0};
  EXPECT_EQ(sample(logits, p, history, rng), 2);
  p.temperature = 1.0f;
  const auto c = sampling_candidates(logits, p, history);
  ASSERT_EQ(c.ids.size(), 3u);
  // Penalized logits: [-2, 1.5, 2].
  const double z = std::exp(-2.0) + std::exp(1.5) + std::exp(2.0);
  EXPECT_EQ(c.ids[0], 2);
  EXPECT_NEAR(c.probs[0], std::exp(2.0) / z, 1e-6);
  EXPECT_NEAR(c.probs[2], std::exp(-2.0) / z, 1e-6);
}

TEST(Sample, SeededDrawsReproduce) {
  SamplerParams p;
  p.temperature = 1.0f;
  std::vector<float> logits(20, 0.0f);
  std::mt19937_64 r1(9), r2(9);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample(logits, p, {}, r1), sample(logits, p, {}, r2));
}

TEST(SamplerParams, RejectsOutOfRange) {
  SamplerParams p;
  p.temperature = -1.0f;
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.top_p = 0.0f;
  EXPECT_THROW(p.validate(), ValidationError);
  p.top_p = 1.5f;
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.repetition_penalty = 0.5f;
  EXPECT_THROW(p.validate(), ValidationError);
}

TEST(Generate, ZeroMaxTokens) {
  const Model m = random_model(tiny_config(), 1);
  const auto r = generate(m, "hello", greedy(0));
  EXPECT_TRUE(r.text.empty());
  EXPECT_TRUE(r.token_ids.empty());
  EXPECT_EQ(r.finish_reason, FinishReason::kMaxTokens);
}

TEST(Generate, GreedyIsDeterministicAcrossWorkers) {
  const Model m = random_model(tiny_config(), 2);
  set_worker_count(1);
  const auto a = generate(m, "abc", greedy(40));
  const auto b = generate(m, "abc", greedy(40));
  set_worker_count(4);
  const auto c = generate(m, "abc", greedy(40));
  set_worker_count(1);
  EXPECT_EQ(a.token_ids.size(), 40u);
  EXPECT_EQ(a.token_ids, b.token_ids);
  EXPECT_EQ(a.token_ids, c.token_ids);
  EXPECT_EQ(a.text, c.text);
}

TEST(Generate, SeededSamplingReproduces) {
  const Model m = random_model(tiny_config(), 2);
  SamplerParams p = greedy(30);
  p.temperature = 1.0f;
  p.top_k = 40;
  p.seed = 1234;
  EXPECT_EQ(generate(m, "x", p).token_ids, generate(m, "x", p).token_ids);
}

TEST(Generate, RiggedModelStopsOnEos) {
  ModelConfig c = tiny_config();
  c.n_layers = 1;
  ModelWeights w = new_random(c, 1);
  for (ProjKind k : kAllProjKinds) {
    for (float& v : w.layers[0][k].dense().span()) v = 0.0f;
  }
  // Every embedding points the same way; EOS points twice as far, so the
  // final hidden state always scores EOS highest.
  for (std::size_t t = 0; t < c.vocab_size; ++t) {
    for (std::size_t i = 0; i < c.d_model; ++i) {
      w.tok_embed.at(t, i) = (t == kEosId ? 2.0f : 1.0f) * (i % 2 ? 0.1f : -0.1f);
    }
  }
  Model m{c, w, default_tokenizer(c.vocab_size)};
  SamplerParams p;
  p.max_tokens = 10;
  const auto r = generate(m, "anything", p);
  EXPECT_EQ(r.finish_reason, FinishReason::kStopToken);
  EXPECT_EQ(r.token_ids, (std::vector<TokenId>{kEosId}));
  EXPECT_TRUE(r.text.empty());
}

TEST(Generate, FragmentsConcatenateToText) {
  const Model m = random_model(tiny_config(), 3);
  SamplerParams p = greedy(60);
  p.temperature = 1.5f;
  p.seed = 5;
  std::string joined;
  std::size_t calls = 0;
  const auto r = generate(m, "hi", p, [&](TokenId, std::string_view f) {
    joined += f;
    ++calls;
    return true;
  });
  EXPECT_EQ(calls, r.token_ids.size());
  EXPECT_EQ(joined, r.text);
  EXPECT_EQ(sanitize_utf8(r.text), r.text);
}

TEST(Generate, CallbackFalseCancels) {
  const Model m = random_model(tiny_config(), 3);
  std::size_t calls = 0;
  const auto r = generate(m, "hi", greedy(50), [&](TokenId, std::string_view) {
    return ++calls < 5;
  });
  EXPECT_EQ(r.finish_reason, FinishReason::kCancelled);
  EXPECT_EQ(r.token_ids.size(), 5u);
}

TEST(Generate, CallbackThrowCancels) {
  const Model m = random_model(tiny_config(), 3);
  const auto r = generate(m, "hi", greedy(50), [](TokenId, std::string_view) -> bool {
    throw std::runtime_error("sink failed");
  });
  EXPECT_EQ(r.finish_reason, FinishReason::kCancelled);
  EXPECT_EQ(r.token_ids.size(), 1u);
}

TEST(Generate, CancelFlagStopsBeforeNextToken) {
  const Model m = random_model(tiny_config(), 3);
  std::atomic<bool> cancel{false};
  GenerateOptions o;
  o.cancel = &cancel;
  std::size_t calls = 0;
  const auto r = generate(m, "hi", greedy(50), [&](TokenId, std::string_view) {
    if (++calls == 3) cancel = true;
    return true;
  }, o);
  EXPECT_EQ(r.finish_reason, FinishReason::kCancelled);
  EXPECT_EQ(r.token_ids.size(), 3u);
}

TEST(Generate, ContextOverflow) {
  ModelConfig c = tiny_config();
  c.max_seq = 16;
  const Model m = random_model(c, 1);
  EXPECT_THROW(generate(m, "hello", greedy(12)), ContextOverflowError);
  EXPECT_NO_THROW(generate(m, "hi", greedy(12)));
}

TEST(Generate, NeverSamplesIdsBeyondTokenizer) {
  ModelConfig c = tiny_config();
  Model m = random_model(c, 1);
  m.tokenizer = Tokenizer();  // 259 ids; the model has 300 logits
  SamplerParams p = greedy(50);
  p.temperature = 5.0f;
  const auto r = generate(m, "x", p);
  for (TokenId t : r.token_ids) EXPECT_LT(t, 259);
}

TEST(ChatTemplate, Format) {
  EXPECT_EQ(apply_chat_template({}, "Hi"), "### Prompt:\nHi\n### Response:\n");
  const std::vector<ChatTurn> history = {{"Hi", "Hello."}};
  EXPECT_EQ(apply_chat_template(history, "More"),
            "### Prompt:\nHi\n### Response:\nHello.\n### Prompt:\nMore\n### Response:\n");
}

}  // namespace
}  // namespace deskllm
