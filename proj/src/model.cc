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

#include "deskllm/model.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "deskllm/errors.h"
#include "deskllm/parallel.h"

namespace deskllm {
namespace {

void require(bool ok, const char* field, const std::string& why) {
  if (!ok) throw ValidationError(std::string("config.") + field + ": " + why);
}

void check_shape(const Tensor& t, std::vector<std::size_t> dims,
                 const std::string& name) {
  if (t.dims() != dims) {
    Tensor expected(dims);
    throw DimensionError(name + " has shape " + t.shape_string() +
                         ", expected " + expected.shape_string());
  }
}

Tensor random_tensor(std::vector<std::size_t> dims, std::mt19937_64& rng,
                     float stddev) {
  Tensor t(std::move(dims));
  std::normal_distribution<float> dist(0.0f, stddev);
  for (float& v : t.span()) v = dist(rng);
  return t;
}

Tensor ones(std::size_t n) {
  return Tensor({n}, std::vector<float>(n, 1.0f));
}

// Applies rotary embedding in place to one head vector at position `pos`.
void apply_rope(float* v, std::size_t d_head, std::size_t pos,
                float rope_base) {
  for (std::size_t i = 0; i < d_head / 2; ++i) {
    const double theta =
        static_cast<double>(pos) *
        std::pow(static_cast<double>(rope_base),
                 -2.0 * static_cast<double>(i) / static_cast<double>(d_head));
    const float c = static_cast<float>(std::cos(theta));
    const float s = static_cast<float>(std::sin(theta));
    const float x0 = v[2 * i];
    const float x1 = v[2 * i + 1];
    v[2 * i] = x0 * c - x1 * s;
    v[2 * i + 1] = x0 * s + x1 * c;
  }
}

// y = W x (+ scale * B (A x) when the adapter targets this projection).
void project(const LayerWeights& layer, std::uint32_t layer_idx, ProjKind kind,
             const LoraAdapter* adapter, std::span<const float> x,
             std::span<float> y) {
  layer[kind].apply(x, y);
  if (adapter == nullptr) return;
  const LoraAdapter::Entry* e = adapter->find(layer_idx, kind);
  if (e == nullptr) return;
  std::vector<float> ax(e->a.rows());
  matvec_into(e->a, x, ax);
  std::vector<float> bax(e->b.rows());
  matvec_into(e->b, ax, bax);
  const float scale = adapter->scale();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += scale * bax[i];
}

Tensor run(const ModelWeights& weights, const ModelConfig& config,
           std::span<const TokenId> tokens, KVCache& cache,
           const LoraAdapter* adapter, bool all_logits) {
  const std::size_t n = tokens.size();
  if (n == 0) throw DimensionError("forward needs at least one token");
  const std::size_t past = cache.length();
  if (past + n > config.max_seq) {
    throw ContextOverflowError(
        "context overflow: " + std::to_string(past) + " cached + " +
        std::to_string(n) + " new tokens exceeds max_seq " +
        std::to_string(config.max_seq));
  }
  const std::size_t d = config.d_model;
  const std::size_t dh = config.d_head();
  const std::size_t n_heads = config.n_heads;
  const std::size_t d_ff = config.d_ff;
  const float eps = config.rmsnorm_eps;
  const float attn_scale = 1.0f / std::sqrt(static_cast<float>(dh));

  for (TokenId t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config.vocab_size) {
      throw VocabularyError("token id " + std::to_string(t) +
                            " outside model vocabulary");
    }
  }

  // Residual stream, one row per new token.
  std::vector<float> x(n * d);
  for (std::size_t t = 0; t < n; ++t) {
    const auto row = weights.tok_embed.row(static_cast<std::size_t>(tokens[t]));
    std::copy(row.begin(), row.end(), x.begin() + t * d);
  }

  std::vector<float> h(n * d), q(n * d), attn_out(n * d);
  std::vector<float> gate(n * d_ff), up(n * d_ff);
  std::vector<float> tmp(n * d);

  for (std::uint32_t l = 0; l < config.n_layers; ++l) {
    const LayerWeights& layer = weights.layers[l];

    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t pos = past + t;
      auto xt = std::span<const float>(x).subspan(t * d, d);
      auto ht = std::span<float>(h).subspan(t * d, d);
      rmsnorm_into(xt, layer.attn_norm.span(), eps, ht);
      auto qt = std::span<float>(q).subspan(t * d, d);
      project(layer, l, ProjKind::kWq, adapter, ht, qt);
      std::span<float> kt(cache.key(l, pos), d);
      std::span<float> vt(cache.value(l, pos), d);
      project(layer, l, ProjKind::kWk, adapter, ht, kt);
      project(layer, l, ProjKind::kWv, adapter, ht, vt);
      for (std::size_t hd = 0; hd < n_heads; ++hd) {
        apply_rope(qt.data() + hd * dh, dh, pos, config.rope_base);
        apply_rope(kt.data() + hd * dh, dh, pos, config.rope_base);
      }
    }

    // Causal attention: new position t sees cached positions [0, past + t].
    parallel_for(n * n_heads, (past + n) * dh,
                 [&](std::size_t begin, std::size_t end) {
      std::vector<float> scores(past + n);
      for (std::size_t job = begin; job < end; ++job) {
        const std::size_t t = job / n_heads;
        const std::size_t hd = job % n_heads;
        const std::size_t span_len = past + t + 1;
        const float* qh = q.data() + t * d + hd * dh;
        for (std::size_t j = 0; j < span_len; ++j) {
          const float* kh = cache.key(l, j) + hd * dh;
          float dot = 0.0f;
          for (std::size_t i = 0; i < dh; ++i) dot += qh[i] * kh[i];
          scores[j] = dot * attn_scale;
        }
        softmax_inplace(std::span<float>(scores).first(span_len));
        float* out = attn_out.data() + t * d + hd * dh;
        std::fill(out, out + dh, 0.0f);
        for (std::size_t j = 0; j < span_len; ++j) {
          const float* vh = cache.value(l, j) + hd * dh;
          const float p = scores[j];
          for (std::size_t i = 0; i < dh; ++i) out[i] += p * vh[i];
        }
      }
    });

    for (std::size_t t = 0; t < n; ++t) {
      auto ot = std::span<const float>(attn_out).subspan(t * d, d);
      auto yt = std::span<float>(tmp).subspan(t * d, d);
      project(layer, l, ProjKind::kWo, adapter, ot, yt);
      for (std::size_t i = 0; i < d; ++i) x[t * d + i] += yt[i];
    }

    for (std::size_t t = 0; t < n; ++t) {
      auto xt = std::span<const float>(x).subspan(t * d, d);
      auto ht = std::span<float>(h).subspan(t * d, d);
      rmsnorm_into(xt, layer.ffn_norm.span(), eps, ht);
      auto gt = std::span<float>(gate).subspan(t * d_ff, d_ff);
      auto ut = std::span<float>(up).subspan(t * d_ff, d_ff);
      project(layer, l, ProjKind::kWGate, adapter, ht, gt);
      project(layer, l, ProjKind::kWUp, adapter, ht, ut);
      for (std::size_t i = 0; i < d_ff; ++i) gt[i] = silu(gt[i]) * ut[i];
      auto yt = std::span<float>(tmp).subspan(t * d, d);
      project(layer, l, ProjKind::kWDown, adapter, gt, yt);
      for (std::size_t i = 0; i < d; ++i) x[t * d + i] += yt[i];
    }
  }
  cache.advance(n);

  const std::size_t first = all_logits ? 0 : n - 1;
  Tensor logits({n - first, config.vocab_size});
  for (std::size_t t = first; t < n; ++t) {
    auto xt = std::span<const float>(x).subspan(t * d, d);
    auto ht = std::span<float>(h).subspan(t * d, d);
    rmsnorm_into(xt, weights.final_norm.span(), eps, ht);
    matvec_into(weights.tok_embed, ht, logits.row(t - first));
  }
  if (!all_logits) {
    return Tensor({config.vocab_size}, logits.values());
  }
  return logits;
}

}  // namespace

void ModelConfig::validate() const {
  require(vocab_size >= 259, "vocab_size", "must be at least 259");
  require(d_model > 0, "d_model", "must be positive");
  require(n_layers > 0, "n_layers", "must be positive");
  require(n_heads > 0, "n_heads", "must be positive");
  require(d_ff > 0, "d_ff", "must be positive");
  require(max_seq > 0, "max_seq", "must be positive");
  require(d_model % n_heads == 0, "n_heads", "must divide d_model");
  require(d_head() % 2 == 0, "n_heads", "d_model / n_heads must be even");
  require(d_model % kQBlockSize == 0, "d_model", "must be a multiple of 32");
  require(d_ff % kQBlockSize == 0, "d_ff", "must be a multiple of 32");
  require(std::isfinite(rope_base) && rope_base > 0.0f, "rope_base",
          "must be positive");
  require(std::isfinite(rmsnorm_eps) && rmsnorm_eps > 0.0f, "rmsnorm_eps",
          "must be positive");
}

const char* proj_name(ProjKind kind) {
  switch (kind) {
    case ProjKind::kWq: return "attn.wq";
    case ProjKind::kWk: return "attn.wk";
    case ProjKind::kWv: return "attn.wv";
    case ProjKind::kWo: return "attn.wo";
    case ProjKind::kWGate: return "ffn.w_gate";
    case ProjKind::kWUp: return "ffn.w_up";
    case ProjKind::kWDown: return "ffn.w_down";
  }
  return "?";
}

std::optional<ProjKind> parse_proj_name(std::string_view name) {
  for (ProjKind k : kAllProjKinds) {
    if (name == proj_name(k)) return k;
  }
  return std::nullopt;
}

std::size_t Projection::rows() const {
  return is_quantized() ? quantized().rows() : dense().rows();
}

std::size_t Projection::cols() const {
  return is_quantized() ? quantized().cols() : dense().cols();
}

Tensor Projection::to_dense() const {
  return is_quantized() ? dequantize_tensor(quantized()) : dense();
}

void Projection::apply(std::span<const float> x, std::span<float> y) const {
  if (is_quantized()) {
    qmatvec_into(quantized(), x, y);
  } else {
    matvec_into(dense(), x, y);
  }
}

bool ModelWeights::is_quantized() const {
  return !layers.empty() && layers[0][ProjKind::kWq].is_quantized();
}

void validate_weights(const ModelWeights& w, const ModelConfig& c) {
  c.validate();
  check_shape(w.tok_embed, {c.vocab_size, c.d_model}, "tok_embed");
  check_shape(w.final_norm, {c.d_model}, "final_norm");
  if (w.layers.size() != c.n_layers) {
    throw DimensionError("weights have " + std::to_string(w.layers.size()) +
                         " layers, config says " + std::to_string(c.n_layers));
  }
  const bool quantized = w.is_quantized();
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    const auto& layer = w.layers[i];
    const std::string prefix = "layers." + std::to_string(i) + ".";
    check_shape(layer.attn_norm, {c.d_model}, prefix + "attn_norm");
    check_shape(layer.ffn_norm, {c.d_model}, prefix + "ffn_norm");
    for (ProjKind k : kAllProjKinds) {
      const Projection& p = layer[k];
      std::size_t rows = c.d_model, cols = c.d_model;
      if (k == ProjKind::kWGate || k == ProjKind::kWUp) rows = c.d_ff;
      if (k == ProjKind::kWDown) cols = c.d_ff;
      if (p.rows() != rows || p.cols() != cols) {
        throw DimensionError(prefix + proj_name(k) + " has shape [" +
                             std::to_string(p.rows()) + "x" +
                             std::to_string(p.cols()) + "], expected [" +
                             std::to_string(rows) + "x" + std::to_string(cols) +
                             "]");
      }
      if (p.is_quantized() != quantized) {
        throw ValidationError(prefix + proj_name(k) +
                              ": projections must be all-f32 or all-Q4");
      }
    }
  }
}

ModelWeights new_random(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  constexpr float kStd = 0.02f;
  ModelWeights w;
  w.tok_embed = random_tensor({config.vocab_size, config.d_model}, rng, kStd);
  w.layers.resize(config.n_layers);
  for (auto& layer : w.layers) {
    layer.attn_norm = ones(config.d_model);
    layer.ffn_norm = ones(config.d_model);
    for (ProjKind k : kAllProjKinds) {
      std::size_t rows = config.d_model, cols = config.d_model;
      if (k == ProjKind::kWGate || k == ProjKind::kWUp) rows = config.d_ff;
      if (k == ProjKind::kWDown) cols = config.d_ff;
      layer[k] = Projection(random_tensor({rows, cols}, rng, kStd));
    }
  }
  w.final_norm = ones(config.d_model);
  return w;
}

ModelWeights quantize_weights(const ModelWeights& weights) {
  ModelWeights out = weights;
  for (auto& layer : out.layers) {
    for (auto& p : layer.proj) {
      if (!p.is_quantized()) p = Projection(quantize_tensor(p.dense()));
    }
  }
  return out;
}

ModelWeights dequantize_weights(const ModelWeights& weights) {
  ModelWeights out = weights;
  for (auto& layer : out.layers) {
    for (auto& p : layer.proj) {
      if (p.is_quantized()) p = Projection(p.to_dense());
    }
  }
  return out;
}

KVCache::KVCache(const ModelConfig& config)
    : d_model_(config.d_model), max_seq_(config.max_seq) {
  keys_.assign(config.n_layers,
               std::vector<float>(std::size_t{config.max_seq} * config.d_model));
  values_.assign(config.n_layers,
                 std::vector<float>(std::size_t{config.max_seq} * config.d_model));
}

std::string LoraTarget::name() const {
  return "layers." + std::to_string(layer) + "." + proj_name(kind);
}

const LoraAdapter::Entry* LoraAdapter::find(std::uint32_t layer,
                                            ProjKind kind) const {
  for (const auto& e : entries) {
    if (e.target.layer == layer && e.target.kind == kind) return &e;
  }
  return nullptr;
}

std::size_t LoraAdapter::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.a.size() + e.b.size();
  return n;
}

std::vector<LoraTarget> default_lora_targets(const ModelConfig& config) {
  std::vector<LoraTarget> targets;
  for (std::uint32_t l = 0; l < config.n_layers; ++l) {
    targets.push_back({l, ProjKind::kWq});
    targets.push_back({l, ProjKind::kWv});
  }
  return targets;
}

namespace {

std::pair<std::size_t, std::size_t> proj_shape(const ModelConfig& c,
                                               ProjKind k) {
  std::size_t rows = c.d_model, cols = c.d_model;
  if (k == ProjKind::kWGate || k == ProjKind::kWUp) rows = c.d_ff;
  if (k == ProjKind::kWDown) cols = c.d_ff;
  return {rows, cols};
}

}  // namespace

LoraAdapter new_lora_adapter(const ModelConfig& config, std::uint32_t rank,
                             float alpha, std::vector<LoraTarget> targets,
                             std::uint64_t seed, float a_std) {
  LoraAdapter adapter;
  adapter.rank = rank;
  adapter.alpha = alpha;
  std::mt19937_64 rng(seed);
  for (const LoraTarget& t : targets) {
    const auto [rows, cols] = proj_shape(config, t.kind);
    LoraAdapter::Entry e;
    e.target = t;
    e.a = random_tensor({rank, cols}, rng, a_std);
    e.b = Tensor({rows, rank});
    adapter.entries.push_back(std::move(e));
  }
  validate_adapter(adapter, config);
  return adapter;
}

void validate_adapter(const LoraAdapter& adapter, const ModelConfig& config) {
  if (adapter.rank == 0) throw AdapterError("adapter rank must be positive");
  if (!std::isfinite(adapter.alpha)) throw AdapterError("adapter alpha must be finite");
  for (std::size_t i = 0; i < adapter.entries.size(); ++i) {
    const auto& e = adapter.entries[i];
    const std::string name = e.target.name();
    if (e.target.layer >= config.n_layers) {
      throw AdapterError(name + ": layer out of range");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (adapter.entries[j].target == e.target) {
        throw AdapterError(name + ": adapted twice");
      }
    }
    const auto [rows, cols] = proj_shape(config, e.target.kind);
    if (adapter.rank > std::min(rows, cols)) {
      throw AdapterError(name + ": rank " + std::to_string(adapter.rank) +
                         " exceeds min(in_dim, out_dim)");
    }
    const std::vector<std::size_t> a_dims{adapter.rank, cols};
    const std::vector<std::size_t> b_dims{rows, adapter.rank};
    if (e.a.dims() != a_dims || e.b.dims() != b_dims) {
      throw AdapterError(name + ": A " + e.a.shape_string() + " / B " +
                         e.b.shape_string() + " do not match projection [" +
                         std::to_string(rows) + "x" + std::to_string(cols) +
                         "] at rank " + std::to_string(adapter.rank));
    }
  }
}

Tensor forward(const ModelWeights& weights, const ModelConfig& config,
               std::span<const TokenId> tokens, KVCache& cache,
               const LoraAdapter* adapter) {
  return run(weights, config, tokens, cache, adapter, false);
}

Tensor forward_all(const ModelWeights& weights, const ModelConfig& config,
                   std::span<const TokenId> tokens, KVCache& cache,
                   const LoraAdapter* adapter) {
  return run(weights, config, tokens, cache, adapter, true);
}

Tensor TransformerLm::sequence_logits(std::span<const TokenId> tokens) const {
  KVCache cache(model_.config);
  return forward_all(model_.weights, model_.config, tokens, cache, adapter_);
}

}  // namespace deskllm
