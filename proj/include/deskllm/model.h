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

#ifndef DESKLLM_MODEL_H_
#define DESKLLM_MODEL_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "deskllm/quant.h"
#include "deskllm/tensor.h"
#include "deskllm/tokenizer.h"

namespace deskllm {

struct ModelConfig {
  std::uint32_t vocab_size = 512;
  std::uint32_t d_model = 128;
  std::uint32_t n_layers = 4;
  std::uint32_t n_heads = 4;
  std::uint32_t d_ff = 768;
  std::uint32_t max_seq = 256;
  float rope_base = 10000.0f;
  float rmsnorm_eps = 1e-5f;

  std::size_t d_head() const { return d_model / n_heads; }

  // Throws ValidationError naming the offending field.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// The seven per-layer projection matrices.
enum class ProjKind : std::uint8_t { kWq, kWk, kWv, kWo, kWGate, kWUp, kWDown };
inline constexpr std::array<ProjKind, 7> kAllProjKinds = {
    ProjKind::kWq,    ProjKind::kWk,  ProjKind::kWv,   ProjKind::kWo,
    ProjKind::kWGate, ProjKind::kWUp, ProjKind::kWDown};

// "attn.wq", "ffn.w_gate", ...
const char* proj_name(ProjKind kind);
std::optional<ProjKind> parse_proj_name(std::string_view name);

// A weight matrix stored either dense or 4-bit quantized.
class Projection {
 public:
  Projection() = default;
  explicit Projection(Tensor dense) : storage_(std::move(dense)) {}
  explicit Projection(QTensor quantized) : storage_(std::move(quantized)) {}

  bool is_quantized() const { return std::holds_alternative<QTensor>(storage_); }
  std::size_t rows() const;
  std::size_t cols() const;

  const Tensor& dense() const { return std::get<Tensor>(storage_); }
  Tensor& dense() { return std::get<Tensor>(storage_); }
  const QTensor& quantized() const { return std::get<QTensor>(storage_); }
  Tensor to_dense() const;

  // y = W x
  void apply(std::span<const float> x, std::span<float> y) const;

  bool operator==(const Projection& other) const {
    return storage_ == other.storage_;
  }

 private:
  std::variant<Tensor, QTensor> storage_;
};

struct LayerWeights {
  Tensor attn_norm;
  Tensor ffn_norm;
  std::array<Projection, 7> proj;  // indexed by ProjKind

  Projection& operator[](ProjKind k) { return proj[static_cast<int>(k)]; }
  const Projection& operator[](ProjKind k) const {
    return proj[static_cast<int>(k)];
  }
  bool operator==(const LayerWeights&) const = default;
};

// The output projection is tok_embed transposed (tied).
struct ModelWeights {
  Tensor tok_embed;  // [vocab x d_model]
  std::vector<LayerWeights> layers;
  Tensor final_norm;

  bool is_quantized() const;
  bool operator==(const ModelWeights&) const = default;
};

// Checks every tensor shape against the config and the all-f32 / all-Q4
// projection rule.
void validate_weights(const ModelWeights& weights, const ModelConfig& config);

// Weights ~ N(0, 0.02) from a seeded generator, norm gains = 1.
ModelWeights new_random(const ModelConfig& config, std::uint64_t seed);

// Quantizes every projection to Q4; norms and embeddings stay f32.
ModelWeights quantize_weights(const ModelWeights& weights);
ModelWeights dequantize_weights(const ModelWeights& weights);

struct Model {
  ModelConfig config;
  ModelWeights weights;
  Tokenizer tokenizer;
};

// Keys and values for positions [0, length) of every layer. Heads are
// contiguous slices of width d_head within each position's d_model row.
class KVCache {
 public:
  explicit KVCache(const ModelConfig& config);

  std::size_t length() const { return length_; }
  std::size_t capacity() const { return max_seq_; }
  void clear() { length_ = 0; }

  float* key(std::size_t layer, std::size_t pos) {
    return keys_[layer].data() + pos * d_model_;
  }
  float* value(std::size_t layer, std::size_t pos) {
    return values_[layer].data() + pos * d_model_;
  }
  const float* key(std::size_t layer, std::size_t pos) const {
    return keys_[layer].data() + pos * d_model_;
  }
  const float* value(std::size_t layer, std::size_t pos) const {
    return values_[layer].data() + pos * d_model_;
  }
  void advance(std::size_t n) { length_ += n; }

 private:
  std::size_t d_model_;
  std::size_t max_seq_;
  std::size_t length_ = 0;
  std::vector<std::vector<float>> keys_;
  std::vector<std::vector<float>> values_;
};

struct LoraTarget {
  std::uint32_t layer = 0;
  ProjKind kind = ProjKind::kWq;

  std::string name() const;  // "layers.{i}.attn.wq"
  bool operator==(const LoraTarget&) const = default;
};

// Low-rank delta (alpha / rank) * B * A per adapted projection.
struct LoraAdapter {
  struct Entry {
    LoraTarget target;
    Tensor a;  // [rank x in_dim]
    Tensor b;  // [out_dim x rank]
    bool operator==(const Entry&) const = default;
  };

  std::uint32_t rank = 4;
  float alpha = 8.0f;
  std::vector<Entry> entries;

  float scale() const { return alpha / static_cast<float>(rank); }
  const Entry* find(std::uint32_t layer, ProjKind kind) const;
  std::size_t parameter_count() const;

  bool operator==(const LoraAdapter&) const = default;
};

// wq and wv of every layer.
std::vector<LoraTarget> default_lora_targets(const ModelConfig& config);

// A ~ N(0, a_std) seeded, B = 0, so the initial delta is exactly zero.
LoraAdapter new_lora_adapter(const ModelConfig& config, std::uint32_t rank,
                             float alpha, std::vector<LoraTarget> targets,
                             std::uint64_t seed, float a_std = 0.02f);

// Throws AdapterError naming the projection on any shape mismatch.
void validate_adapter(const LoraAdapter& adapter, const ModelConfig& config);

// Runs `tokens` after the cached prefix and returns next-token logits for
// the last of them. Appends keys/values to the cache. The adapter, when
// given, is applied at runtime without touching the weights.
// Throws ContextOverflowError if the cache would exceed max_seq.
Tensor forward(const ModelWeights& weights, const ModelConfig& config,
               std::span<const TokenId> tokens, KVCache& cache,
               const LoraAdapter* adapter = nullptr);

// Same as forward() but returns logits for every new position,
// [tokens.size() x vocab].
Tensor forward_all(const ModelWeights& weights, const ModelConfig& config,
                   std::span<const TokenId> tokens, KVCache& cache,
                   const LoraAdapter* adapter = nullptr);

// Anything that yields next-token logits for a token sequence. The
// evaluation harness is written against this so scoring rules can be
// checked with constructed models.
class CausalLm {
 public:
  virtual ~CausalLm() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t max_seq() const = 0;
  // Row t holds next-token logits given tokens[0..t].
  virtual Tensor sequence_logits(std::span<const TokenId> tokens) const = 0;
};

class TransformerLm final : public CausalLm {
 public:
  explicit TransformerLm(const Model& model,
                         const LoraAdapter* adapter = nullptr)
      : model_(model), adapter_(adapter) {}

  std::size_t vocab_size() const override { return model_.config.vocab_size; }
  std::size_t max_seq() const override { return model_.config.max_seq; }
  Tensor sequence_logits(std::span<const TokenId> tokens) const override;

 private:
  const Model& model_;
  const LoraAdapter* adapter_;
};

}  // namespace deskllm

#endif  // DESKLLM_MODEL_H_
