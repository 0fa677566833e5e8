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

#include "deskllm/quant.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <string>

#include "deskllm/errors.h"
#include "deskllm/parallel.h"

namespace deskllm {

void QBlock::set_code(std::size_t i, std::uint8_t q) {
  std::uint8_t& b = packed[i / 2];
  if (i & 1) {
    b = static_cast<std::uint8_t>((b & 0x0F) | (q << 4));
  } else {
    b = static_cast<std::uint8_t>((b & 0xF0) | (q & 0x0F));
  }
}

void QBlock::write_bytes(std::span<std::uint8_t, kQBlockBytes> out) const {
  const auto bits = std::bit_cast<std::uint32_t>(scale);
  for (int i = 0; i < 4; ++i) out[i] = static_cast<std::uint8_t>(bits >> (8 * i));
  std::copy(packed.begin(), packed.end(), out.begin() + 4);
}

QBlock QBlock::read_bytes(std::span<const std::uint8_t, kQBlockBytes> in) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= std::uint32_t{in[i]} << (8 * i);
  QBlock b;
  b.scale = std::bit_cast<float>(bits);
  std::copy(in.begin() + 4, in.end(), b.packed.begin());
  return b;
}

bool QBlock::operator==(const QBlock& other) const {
  return std::bit_cast<std::uint32_t>(scale) ==
             std::bit_cast<std::uint32_t>(other.scale) &&
         packed == other.packed;
}

QBlock quantize_block(std::span<const float, kQBlockSize> x) {
  float amax = 0.0f;
  for (float v : x) {
    if (!std::isfinite(v)) {
      throw EncodingError("cannot quantize non-finite value");
    }
    amax = std::max(amax, std::fabs(v));
  }
  QBlock block;
  block.scale = amax / 7.0f;
  for (std::size_t i = 0; i < kQBlockSize; ++i) {
    int q = kQZeroPoint;
    if (block.scale > 0.0f) {
      // std::round rounds halfway cases away from zero.
      q = static_cast<int>(std::round(x[i] / block.scale)) + kQZeroPoint;
      q = std::clamp(q, 0, 15);
    }
    block.set_code(i, static_cast<std::uint8_t>(q));
  }
  return block;
}

void dequantize_block_into(const QBlock& block,
                           std::span<float, kQBlockSize> out) {
  for (std::size_t i = 0; i < kQBlockSize; ++i) {
    out[i] = block.scale * static_cast<float>(int{block.code(i)} - kQZeroPoint);
  }
}

std::array<float, kQBlockSize> dequantize_block(const QBlock& block) {
  std::array<float, kQBlockSize> out;
  dequantize_block_into(block, out);
  return out;
}

QTensor::QTensor(std::size_t rows, std::size_t cols, std::vector<QBlock> blocks)
    : rows_(rows), cols_(cols), blocks_(std::move(blocks)) {
  if (cols % kQBlockSize != 0) {
    throw AlignmentError("QTensor column count " + std::to_string(cols) +
                         " is not a multiple of 32");
  }
  if (blocks_.size() != rows * cols / kQBlockSize) {
    throw DimensionError("QTensor [" + std::to_string(rows) + "x" +
                         std::to_string(cols) + "] needs " +
                         std::to_string(rows * cols / kQBlockSize) +
                         " blocks, got " + std::to_string(blocks_.size()));
  }
}

QTensor quantize_tensor(const Tensor& w) {
  if (w.rank() != 2) {
    throw DimensionError("quantize_tensor expects a matrix, got " +
                         w.shape_string());
  }
  if (w.cols() % kQBlockSize != 0) {
    throw AlignmentError("cannot quantize " + w.shape_string() +
                         ": column count must be a multiple of 32; pad the "
                         "matrix with zero columns first");
  }
  const std::size_t per_row = w.cols() / kQBlockSize;
  std::vector<QBlock> blocks(w.rows() * per_row);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto row = w.row(r);
    for (std::size_t b = 0; b < per_row; ++b) {
      blocks[r * per_row + b] = quantize_block(
          row.subspan(b * kQBlockSize).first<kQBlockSize>());
    }
  }
  return QTensor(w.rows(), w.cols(), std::move(blocks));
}

Tensor dequantize_tensor(const QTensor& q) {
  Tensor w({q.rows(), q.cols()});
  for (std::size_t r = 0; r < q.rows(); ++r) {
    auto row = w.row(r);
    for (std::size_t b = 0; b < q.blocks_per_row(); ++b) {
      dequantize_block_into(q.block(r, b),
                            row.subspan(b * kQBlockSize).first<kQBlockSize>());
    }
  }
  return w;
}

void qmatvec_into(const QTensor& q, std::span<const float> x,
                  std::span<float> y) {
  if (q.cols() != x.size() || q.rows() != y.size()) {
    throw DimensionError("qmatvec shape mismatch: [" +
                         std::to_string(q.rows()) + "x" +
                         std::to_string(q.cols()) + "] x [" +
                         std::to_string(x.size()) + "]");
  }
  const std::size_t per_row = q.blocks_per_row();
  parallel_for(q.rows(), q.cols(), [&](std::size_t begin, std::size_t end) {
    std::array<float, kQBlockSize> tmp;
    for (std::size_t r = begin; r < end; ++r) {
      float acc = 0.0f;
      for (std::size_t b = 0; b < per_row; ++b) {
        dequantize_block_into(q.block(r, b), tmp);
        const float* xb = x.data() + b * kQBlockSize;
        for (std::size_t i = 0; i < kQBlockSize; ++i) acc += tmp[i] * xb[i];
      }
      y[r] = acc;
    }
  });
}

Tensor qmatvec(const QTensor& q, const Tensor& x) {
  if (x.rank() != 1) {
    throw DimensionError("qmatvec expects a vector, got " + x.shape_string());
  }
  Tensor y({q.rows()});
  qmatvec_into(q, x.span(), y.span());
  return y;
}

}  // namespace deskllm
