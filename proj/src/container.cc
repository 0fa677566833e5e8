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

#include "deskllm/container.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <functional>
#include <iterator>
#include <variant>

#include "deskllm/errors.h"

namespace deskllm {
namespace {

using Kind = ContainerError::Kind;

constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeQ4 = 1;
constexpr std::size_t kAlign = 32;

std::size_t align_up(std::size_t n) { return (n + kAlign - 1) / kAlign * kAlign; }

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void pad_to(std::size_t n) { buf_.resize(n, 0); }
  std::size_t size() const { return buf_.size(); }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t offset() const { return pos_; }
  std::size_t size() const { return data_.size(); }
  std::span<const std::uint8_t> data() const { return data_; }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (n > data_.size() - pos_) {
      throw ContainerError(Kind::kTruncated, pos_,
                           std::string("need ") + std::to_string(n) +
                               " bytes for " + what + ", " +
                               std::to_string(data_.size() - pos_) + " left");
    }
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8(const char* what) { return take(1, what)[0]; }
  std::uint32_t u32(const char* what) {
    auto b = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[i]} << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    auto b = take(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

struct OutTensor {
  std::string name;
  std::variant<const Tensor*, const QTensor*> data;
};

struct InTensor {
  std::uint64_t entry_offset = 0;
  std::uint8_t dtype = 0;
  std::vector<std::uint32_t> dims;
  std::span<const std::uint8_t> payload;
};

struct Parsed {
  SectionTag section = SectionTag::kModel;
  std::size_t config_offset = 0;
  std::size_t directory_offset = 0;
  std::map<std::string, InTensor> tensors;
};

std::size_t payload_size(std::uint8_t dtype,
                         const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return dtype == kDtypeF32 ? n * 4 : n / kQBlockSize * kQBlockBytes;
}

void write_header(Writer& w, SectionTag tag) {
  w.bytes("GFAC", 4);
  w.u32(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(tag));
}

void write_tokenizer(Writer& w, const Tokenizer& tok) {
  w.u32(static_cast<std::uint32_t>(tok.merges().size()));
  for (const Merge& m : tok.merges()) {
    w.u32(static_cast<std::uint32_t>(m.left));
    w.u32(static_cast<std::uint32_t>(m.right));
    w.u32(static_cast<std::uint32_t>(m.new_id));
  }
}

void write_tensors(Writer& w, const std::vector<OutTensor>& tensors) {
  std::vector<std::uint64_t> offsets;
  std::uint64_t cursor = 0;
  for (const auto& t : tensors) {
    offsets.push_back(cursor);
    const std::size_t n = std::visit(
        [](auto* p) -> std::size_t {
          if constexpr (std::is_same_v<decltype(p), const Tensor*>) {
            return p->size() * 4;
          } else {
            return p->payload_bytes();
          }
        },
        t.data);
    cursor += align_up(n);
  }

  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    std::vector<std::size_t> dims;
    if (const auto* dense = std::get_if<const Tensor*>(&t.data)) {
      w.u8(kDtypeF32);
      dims = (*dense)->dims();
    } else {
      w.u8(kDtypeQ4);
      dims = std::get<const QTensor*>(t.data)->dims();
    }
    w.u8(static_cast<std::uint8_t>(dims.size()));
    for (auto d : dims) w.u32(static_cast<std::uint32_t>(d));
    w.u64(offsets[i]);
  }

  const std::size_t data_start = align_up(w.size());
  w.pad_to(data_start);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    if (const auto* dense = std::get_if<const Tensor*>(&t.data)) {
      for (float v : (*dense)->span()) w.f32(v);
    } else {
      std::array<std::uint8_t, kQBlockBytes> buf;
      for (const QBlock& b : std::get<const QTensor*>(t.data)->blocks()) {
        b.write_bytes(buf);
        w.bytes(buf.data(), buf.size());
      }
    }
    w.pad_to(data_start + offsets[i] +
             align_up(w.size() - data_start - offsets[i]));
  }
}

SectionTag read_header(Reader& r) {
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), "GFAC", 4) != 0) {
    throw ContainerError(Kind::kBadMagic, 0, "expected \"GFAC\"");
  }
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kContainerVersion) {
    throw ContainerError(Kind::kBadVersion, version_at,
                         "version " + std::to_string(version));
  }
  const std::size_t tag_at = r.offset();
  const std::uint32_t tag = r.u32("section tag");
  if (tag != 1 && tag != 2) {
    throw ContainerError(Kind::kBadSection, tag_at, "tag " + std::to_string(tag));
  }
  return static_cast<SectionTag>(tag);
}

Tokenizer read_tokenizer(Reader& r) {
  const std::size_t at = r.offset();
  const std::uint32_t n = r.u32("merge count");
  std::vector<Merge> merges;
  merges.reserve(std::min<std::size_t>(n, r.size() / 12));
  for (std::uint32_t i = 0; i < n; ++i) {
    Merge m;
    m.left = static_cast<TokenId>(r.u32("merge"));
    m.right = static_cast<TokenId>(r.u32("merge"));
    m.new_id = static_cast<TokenId>(r.u32("merge"));
    merges.push_back(m);
  }
  try {
    return Tokenizer(std::move(merges));
  } catch (const ValidationError& e) {
    throw ContainerError(Kind::kBadConfig, at, e.what());
  }
}

void read_directory(Reader& r, Parsed& out) {
  out.directory_offset = r.offset();
  const std::uint32_t n = r.u32("tensor count");
  struct Pending {
    std::string name;
    InTensor t;
    std::uint64_t data_offset;
  };
  std::vector<Pending> entries;
  for (std::uint32_t i = 0; i < n; ++i) {
    Pending p;
    p.t.entry_offset = r.offset();
    const std::uint32_t name_len = r.u32("name length");
    auto name = r.take(name_len, "tensor name");
    p.name.assign(name.begin(), name.end());
    p.t.dtype = r.u8("dtype");
    if (p.t.dtype != kDtypeF32 && p.t.dtype != kDtypeQ4) {
      throw ContainerError(Kind::kBadTensor, p.t.entry_offset,
                           p.name + ": unknown dtype " + std::to_string(p.t.dtype));
    }
    const std::uint8_t n_dims = r.u8("n_dims");
    if (n_dims < 1 || n_dims > 2 || (p.t.dtype == kDtypeQ4 && n_dims != 2)) {
      throw ContainerError(Kind::kBadTensor, p.t.entry_offset,
                           p.name + ": bad rank " + std::to_string(n_dims));
    }
    for (std::uint8_t d = 0; d < n_dims; ++d) p.t.dims.push_back(r.u32("dims"));
    if (p.t.dtype == kDtypeQ4 && p.t.dims[1] % kQBlockSize != 0) {
      throw ContainerError(Kind::kBadTensor, p.t.entry_offset,
                           p.name + ": q4 columns not a multiple of 32");
    }
    p.data_offset = r.u64("data offset");
    for (const auto& prev : entries) {
      if (prev.name == p.name) {
        throw ContainerError(Kind::kDuplicateTensor, p.t.entry_offset, p.name);
      }
    }
    entries.push_back(std::move(p));
  }
  const std::size_t data_start = align_up(r.offset());
  for (auto& p : entries) {
    const std::size_t n_bytes = payload_size(p.t.dtype, p.t.dims);
    const std::uint64_t begin = data_start + p.data_offset;
    if (p.data_offset > r.size() || begin > r.size() ||
        n_bytes > r.size() - begin) {
      throw ContainerError(Kind::kTruncated,
                           std::min<std::uint64_t>(begin, r.size()),
                           p.name + ": payload runs past end of file");
    }
    p.t.payload = r.data().subspan(begin, n_bytes);
    out.tensors.emplace(std::move(p.name), std::move(p.t));
  }
}

Parsed parse_common(std::span<const std::uint8_t> bytes, SectionTag expected,
                    const std::function<void(Reader&)>& read_config,
                    Tokenizer* tokenizer) {
  Reader r(bytes);
  Parsed out;
  out.section = read_header(r);
  if (out.section != expected) {
    throw ContainerError(Kind::kBadSection, 8,
                         expected == SectionTag::kModel
                             ? "file holds an adapter, expected a model"
                             : "file holds a model, expected an adapter");
  }
  out.config_offset = r.offset();
  read_config(r);
  Tokenizer tok = read_tokenizer(r);
  if (tokenizer != nullptr) *tokenizer = std::move(tok);
  read_directory(r, out);
  return out;
}

Tensor decode_f32(const std::string& name, const InTensor& t,
                  std::vector<std::size_t> expected) {
  std::vector<std::size_t> dims(t.dims.begin(), t.dims.end());
  if (t.dtype != kDtypeF32) {
    throw ContainerError(Kind::kBadTensor, t.entry_offset, name + " must be f32");
  }
  if (dims != expected) {
    throw ContainerError(Kind::kBadTensor, t.entry_offset,
                         name + " has unexpected shape");
  }
  std::vector<float> values(t.payload.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= std::uint32_t{t.payload[4 * i + k]} << (8 * k);
    values[i] = std::bit_cast<float>(bits);
  }
  return Tensor(std::move(dims), std::move(values));
}

Projection decode_projection(const std::string& name, const InTensor& t,
                             std::size_t rows, std::size_t cols) {
  if (t.dtype == kDtypeF32) return Projection(decode_f32(name, t, {rows, cols}));
  if (t.dims.size() != 2 || t.dims[0] != rows || t.dims[1] != cols) {
    throw ContainerError(Kind::kBadTensor, t.entry_offset,
                         name + " has unexpected shape");
  }
  std::vector<QBlock> blocks(rows * cols / kQBlockSize);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i] = QBlock::read_bytes(
        t.payload.subspan(i * kQBlockBytes).first<kQBlockBytes>());
  }
  return Projection(QTensor(rows, cols, std::move(blocks)));
}

const InTensor& require_tensor(const Parsed& p, const std::string& name) {
  auto it = p.tensors.find(name);
  if (it == p.tensors.end()) {
    throw ContainerError(Kind::kMissingTensor, p.directory_offset, name);
  }
  return it->second;
}

std::pair<std::size_t, std::size_t> projection_shape(const ModelConfig& c,
                                                     ProjKind k) {
  std::size_t rows = c.d_model, cols = c.d_model;
  if (k == ProjKind::kWGate || k == ProjKind::kWUp) rows = c.d_ff;
  if (k == ProjKind::kWDown) cols = c.d_ff;
  return {rows, cols};
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const Model& model) {
  validate_weights(model.weights, model.config);
  const ModelConfig& c = model.config;
  Writer w;
  write_header(w, SectionTag::kModel);
  w.u32(c.vocab_size);
  w.u32(c.d_model);
  w.u32(c.n_layers);
  w.u32(c.n_heads);
  w.u32(c.d_ff);
  w.u32(c.max_seq);
  w.f32(c.rope_base);
  w.f32(c.rmsnorm_eps);
  write_tokenizer(w, model.tokenizer);

  std::vector<OutTensor> tensors;
  tensors.push_back({"tok_embed", &model.weights.tok_embed});
  tensors.push_back({"final_norm", &model.weights.final_norm});
  for (std::size_t i = 0; i < model.weights.layers.size(); ++i) {
    const LayerWeights& layer = model.weights.layers[i];
    const std::string prefix = "layers." + std::to_string(i) + ".";
    tensors.push_back({prefix + "attn_norm", &layer.attn_norm});
    tensors.push_back({prefix + "ffn_norm", &layer.ffn_norm});
    for (ProjKind k : kAllProjKinds) {
      const Projection& p = layer[k];
      if (p.is_quantized()) {
        tensors.push_back({prefix + proj_name(k), &p.quantized()});
      } else {
        tensors.push_back({prefix + proj_name(k), &p.dense()});
      }
    }
  }
  write_tensors(w, tensors);
  return w.take();
}

Model parse_model(std::span<const std::uint8_t> bytes) {
  Model model;
  ModelConfig& c = model.config;
  const Parsed p = parse_common(
      bytes, SectionTag::kModel,
      [&](Reader& r) {
        c.vocab_size = r.u32("config");
        c.d_model = r.u32("config");
        c.n_layers = r.u32("config");
        c.n_heads = r.u32("config");
        c.d_ff = r.u32("config");
        c.max_seq = r.u32("config");
        c.rope_base = r.f32("config");
        c.rmsnorm_eps = r.f32("config");
      },
      &model.tokenizer);
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ContainerError(Kind::kBadConfig, p.config_offset, e.what());
  }
  if (model.tokenizer.vocab_size() > c.vocab_size) {
    throw ContainerError(Kind::kBadConfig, p.config_offset,
                         "tokenizer vocabulary exceeds vocab_size");
  }

  for (const auto& [name, t] : p.tensors) {
    bool known = name == "tok_embed" || name == "final_norm";
    for (std::uint32_t i = 0; i < c.n_layers && !known; ++i) {
      const std::string prefix = "layers." + std::to_string(i) + ".";
      if (name.rfind(prefix, 0) != 0) continue;
      const std::string rest = name.substr(prefix.size());
      known = rest == "attn_norm" || rest == "ffn_norm" ||
              parse_proj_name(rest).has_value();
    }
    if (!known) {
      throw ContainerError(Kind::kBadTensor, t.entry_offset,
                           "unexpected tensor " + name);
    }
  }

  ModelWeights& w = model.weights;
  w.tok_embed = decode_f32("tok_embed", require_tensor(p, "tok_embed"),
                           {c.vocab_size, c.d_model});
  w.final_norm = decode_f32("final_norm", require_tensor(p, "final_norm"),
                            {c.d_model});
  w.layers.resize(c.n_layers);
  for (std::uint32_t i = 0; i < c.n_layers; ++i) {
    LayerWeights& layer = w.layers[i];
    const std::string prefix = "layers." + std::to_string(i) + ".";
    layer.attn_norm = decode_f32(prefix + "attn_norm",
                                 require_tensor(p, prefix + "attn_norm"), {c.d_model});
    layer.ffn_norm = decode_f32(prefix + "ffn_norm",
                                require_tensor(p, prefix + "ffn_norm"), {c.d_model});
    for (ProjKind k : kAllProjKinds) {
      const std::string name = prefix + proj_name(k);
      const auto [rows, cols] = projection_shape(c, k);
      layer[k] = decode_projection(name, require_tensor(p, name), rows, cols);
    }
  }
  try {
    validate_weights(w, c);
  } catch (const Error& e) {
    throw ContainerError(Kind::kBadTensor, p.directory_offset, e.what());
  }
  return model;
}

std::vector<std::uint8_t> serialize_adapter(const LoraAdapter& adapter) {
  Writer w;
  write_header(w, SectionTag::kAdapter);
  w.u32(adapter.rank);
  w.f32(adapter.alpha);
  write_tokenizer(w, Tokenizer());
  std::vector<OutTensor> tensors;
  for (const auto& e : adapter.entries) {
    const std::string base = "lora." + e.target.name();
    tensors.push_back({base + ".A", &e.a});
    tensors.push_back({base + ".B", &e.b});
  }
  write_tensors(w, tensors);
  return w.take();
}

LoraAdapter parse_adapter(std::span<const std::uint8_t> bytes) {
  LoraAdapter adapter;
  const Parsed p = parse_common(
      bytes, SectionTag::kAdapter,
      [&](Reader& r) {
        adapter.rank = r.u32("adapter config");
        adapter.alpha = r.f32("adapter config");
      },
      nullptr);
  if (adapter.rank == 0) {
    throw ContainerError(Kind::kBadConfig, p.config_offset, "rank must be positive");
  }
  // Group A/B pairs by target, ordered by (layer, projection).
  std::map<std::pair<std::uint32_t, int>, LoraAdapter::Entry> grouped;
  for (const auto& [name, t] : p.tensors) {
    auto bad = [&](const std::string& why) {
      return ContainerError(Kind::kBadTensor, t.entry_offset, name + ": " + why);
    };
    const std::string prefix = "lora.layers.";
    if (name.rfind(prefix, 0) != 0 || name.size() < prefix.size() + 3) {
      throw bad("not an adapter tensor name");
    }
    const char which = name.back();
    if ((which != 'A' && which != 'B') || name[name.size() - 2] != '.') {
      throw bad("expected .A or .B suffix");
    }
    const std::string middle =
        name.substr(prefix.size(), name.size() - prefix.size() - 2);
    const auto dot = middle.find('.');
    if (dot == std::string::npos || dot == 0) throw bad("missing layer index");
    std::uint32_t layer = 0;
    for (std::size_t i = 0; i < dot; ++i) {
      if (middle[i] < '0' || middle[i] > '9') throw bad("bad layer index");
      layer = layer * 10 + static_cast<std::uint32_t>(middle[i] - '0');
    }
    const auto kind = parse_proj_name(middle.substr(dot + 1));
    if (!kind) throw bad("unknown projection");
    std::vector<std::size_t> dims(t.dims.begin(), t.dims.end());
    if (dims.size() != 2) throw bad("adapter factors must be matrices");
    auto& entry = grouped[{layer, static_cast<int>(*kind)}];
    entry.target = {layer, *kind};
    (which == 'A' ? entry.a : entry.b) = decode_f32(name, t, dims);
  }
  for (auto& [key, entry] : grouped) {
    if (entry.a.size() == 0 || entry.b.size() == 0) {
      throw ContainerError(Kind::kMissingTensor, p.directory_offset,
                           "lora." + entry.target.name() + " lacks A or B");
    }
    adapter.entries.push_back(std::move(entry));
  }
  return adapter;
}

SectionTag peek_section(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  return read_header(r);
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContainerError(Kind::kIo, 0, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_bytes(const std::string& path,
                      std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ContainerError(Kind::kIo, 0, "cannot create " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ContainerError(Kind::kIo, 0, "write failed for " + path);
}

void save_model(const std::string& path, const Model& model) {
  write_file_bytes(path, serialize_model(model));
}

Model load_model(const std::string& path) {
  return parse_model(read_file_bytes(path));
}

void save_adapter(const std::string& path, const LoraAdapter& adapter) {
  write_file_bytes(path, serialize_adapter(adapter));
}

LoraAdapter load_adapter(const std::string& path) {
  return parse_adapter(read_file_bytes(path));
}

}  // namespace deskllm
