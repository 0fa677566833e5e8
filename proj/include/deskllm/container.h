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

#ifndef DESKLLM_CONTAINER_H_
#define DESKLLM_CONTAINER_H_

// GFAC v1: the little-endian file format for models and LoRA adapters.
//
//   "GFAC" | version u32 = 1 | section u32 (1 = model, 2 = adapter)
//   config:    model   -> vocab_size d_model n_layers n_heads d_ff max_seq
//                         (u32 each), rope_base rmsnorm_eps (f32 each)
//              adapter -> rank u32, alpha f32
//   tokenizer: n_merges u32, then (left, right, new_id) u32 triples
//   directory: n_tensors u32, then per tensor
//                name_len u32 | name | dtype u8 (0 = f32, 1 = q4) |
//                n_dims u8 | dims u32... | data_offset u64
//   data:      starts at the next 32-byte file boundary; each tensor is
//              padded to a multiple of 32 bytes. data_offset is relative to
//              the start of the data section.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "deskllm/model.h"

namespace deskllm {

inline constexpr std::uint32_t kContainerVersion = 1;

enum class SectionTag : std::uint32_t { kModel = 1, kAdapter = 2 };

std::vector<std::uint8_t> serialize_model(const Model& model);
Model parse_model(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> serialize_adapter(const LoraAdapter& adapter);
LoraAdapter parse_adapter(std::span<const std::uint8_t> bytes);

// Reads magic, version and section tag only.
SectionTag peek_section(std::span<const std::uint8_t> bytes);

void save_model(const std::string& path, const Model& model);
Model load_model(const std::string& path);
void save_adapter(const std::string& path, const LoraAdapter& adapter);
LoraAdapter load_adapter(const std::string& path);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path,
                      std::span<const std::uint8_t> bytes);

}  // namespace deskllm

#endif  // DESKLLM_CONTAINER_H_
