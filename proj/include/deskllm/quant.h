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

#ifndef DESKLLM_QUANT_H_
#define DESKLLM_QUANT_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "deskllm/tensor.h"

namespace deskllm {

inline constexpr std::size_t kQBlockSize = 32;
inline constexpr std::size_t kQBlockBytes = 20;
inline constexpr int kQZeroPoint = 8;

// 32 weights as 4-bit codes sharing one f32 scale. Code q decodes to
// scale * (q - 8). Byte j of `packed` holds element 2j in its low nibble and
// element 2j+1 in its high nibble.
struct QBlock {
  float scale = 0.0f;
  std::array<std::uint8_t, kQBlockSize / 2> packed{};

  std::uint8_t code(std::size_t i) const {
    const std::uint8_t b = packed[i / 2];
    return (i & 1) ? static_cast<std::uint8_t>(b >> 4)
                   : static_cast<std::uint8_t>(b & 0x0F);
  }
  void set_code(std::size_t i, std::uint8_t q);

  // Little-endian wire form: 4 scale bytes then 16 nibble bytes.
  void write_bytes(std::span<std::uint8_t, kQBlockBytes> out) const;
  static QBlock read_bytes(std::span<const std::uint8_t, kQBlockBytes> in);

  bool operator==(const QBlock& other) const;
};

QBlock quantize_block(std::span<const float, kQBlockSize> x);
std::array<float, kQBlockSize> dequantize_block(const QBlock& block);
void dequantize_block_into(const QBlock& block, std::span<float, kQBlockSize> out);

// Row-major matrix of QBlocks, cols / 32 blocks per row.
class QTensor {
 public:
  QTensor() = default;
  QTensor(std::size_t rows, std::size_t cols, std::vector<QBlock> blocks);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::vector<std::size_t> dims() const { return {rows_, cols_}; }
  std::size_t blocks_per_row() const { return cols_ / kQBlockSize; }
  const std::vector<QBlock>& blocks() const { return blocks_; }
  const QBlock& block(std::size_t r, std::size_t b) const {
    return blocks_[r * blocks_per_row() + b];
  }

  // Serialized size: 20 bytes per block.
  std::size_t payload_bytes() const { return blocks_.size() * kQBlockBytes; }

  bool operator==(const QTensor& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<QBlock> blocks_;
};

QTensor quantize_tensor(const Tensor& w);
Tensor dequantize_tensor(const QTensor& q);

// Bitwise identical to matvec(dequantize_tensor(q), x).
Tensor qmatvec(const QTensor& q, const Tensor& x);
void qmatvec_into(const QTensor& q, std::span<const float> x, std::span<float> y);

}  // namespace deskllm

#endif  // DESKLLM_QUANT_H_
