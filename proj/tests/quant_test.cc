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

#include <array>
#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "deskllm/errors.h"

namespace deskllm {
namespace {

std::array<float, kQBlockSize> zeros() {
  std::array<float, kQBlockSize> x{};
  return x;
}

TEST(QuantBlock, AllZeros) {
  const auto x = zeros();
  const QBlock b = quantize_block(x);
  EXPECT_EQ(b.scale, 0.0f);
  for (std::size_t i = 0; i < kQBlockSize; ++i) EXPECT_EQ(b.code(i), 8);
  for (float v : dequantize_block(b)) EXPECT_EQ(v, 0.0f);
}

TEST(QuantBlock, WorkedExample) {
  auto x = zeros();
  x[0] = 0.7f;
  x[1] = -0.7f;
  const QBlock b = quantize_block(x);
  EXPECT_FLOAT_EQ(b.scale, 0.1f);
  EXPECT_EQ(b.code(0), 15);
  EXPECT_EQ(b.code(1), 1);
  for (std::size_t i = 2; i < kQBlockSize; ++i) EXPECT_EQ(b.code(i), 8);
  const auto y = dequantize_block(b);
  EXPECT_FLOAT_EQ(y[0], 0.7f);
  EXPECT_FLOAT_EQ(y[1], -0.7f);
  for (std::size_t i = 2; i < kQBlockSize; ++i) EXPECT_EQ(y[i], 0.0f);
}

TEST(QuantBlock, DecodeFormula) {
  QBlock b;
  b.scale = 0.25f;
  for (std::size_t i = 0; i < kQBlockSize; ++i) b.set_code(i, static_cast<std::uint8_t>(i % 16));
  const auto y = dequantize_block(b);
  for (std::size_t i = 0; i < kQBlockSize; ++i) {
    EXPECT_EQ(y[i], 0.25f * static_cast<float>(static_cast<int>(i % 16) - 8));
  }
}

TEST(QuantBlock, ErrorBoundOnRandomBlocks) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  for (int trial = 0; trial < 2000; ++trial) {
    std::array<float, kQBlockSize> x;
    for (float& v : x) v = dist(rng);
    const QBlock b = quantize_block(x);
    const auto y = dequantize_block(b);
    for (std::size_t i = 0; i < kQBlockSize; ++i) {
      ASSERT_LE(std::fabs(y[i] - x[i]), b.scale / 2 + 1e-6f);
    }
  }
}

TEST(QuantBlock, IdempotentOnLattice) {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> dist;
  for (int trial = 0; trial < 200; ++trial) {
    std::array<float, kQBlockSize> x;
    for (float& v : x) v = dist(rng);
    const auto once = dequantize_block(quantize_block(x));
    const auto twice = dequantize_block(quantize_block(once));
    for (std::size_t i = 0; i < kQBlockSize; ++i) ASSERT_EQ(once[i], twice[i]);
  }
}

TEST(QuantBlock, NonFiniteRejected) {
  auto x = zeros();
  x[5] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(quantize_block(x), EncodingError);
  x[5] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(quantize_block(x), EncodingError);
}

TEST(QuantBlock, WireFormRoundTrip) {
  std::mt19937_64 rng(8);
  std::normal_distribution<float> dist;
  std::array<float, kQBlockSize> x;
  for (float& v : x) v = dist(rng);
  const QBlock b = quantize_block(x);
  std::array<std::uint8_t, kQBlockBytes> bytes{};
  b.write_bytes(bytes);
  EXPECT_EQ(QBlock::read_bytes(bytes), b);
  // Element 0 sits in the low nibble of the first packed byte.
  EXPECT_EQ(bytes[4] & 0x0F, b.code(0));
  EXPECT_EQ(bytes[4] >> 4, b.code(1));
}

TEST(QuantTensor, ZeroMatrix) {
  const QTensor q = quantize_tensor(Tensor({2, 32}));
  EXPECT_EQ(q.blocks().size(), 2u);
  const Tensor d = dequantize_tensor(q);
  for (float v : d.span()) EXPECT_EQ(v, 0.0f);
}

TEST(QuantTensor, RandomMatrixWithinHalfStep) {
  std::mt19937_64 rng(21);
  std::normal_distribution<float> dist;
  Tensor w({8, 64});
  for (float& v : w.span()) v = dist(rng);
  const QTensor q = quantize_tensor(w);
  const Tensor back = dequantize_tensor(q);
  for (std::size_t r = 0; r < 8; ++r) {
    for (std::size_t c = 0; c < 64; ++c) {
      const float d = q.block(r, c / 32).scale;
      EXPECT_LE(std::fabs(back.at(r, c) - w.at(r, c)), d / 2 + 1e-6f);
    }
  }
}

TEST(QuantTensor, PayloadSize) {
  const QTensor q = quantize_tensor(Tensor({128, 256}));
  EXPECT_EQ(q.payload_bytes(), 20480u);
  EXPECT_EQ(128u * 256u * 4u, 131072u);
  EXPECT_DOUBLE_EQ(131072.0 / static_cast<double>(q.payload_bytes()), 6.4);
}

TEST(QuantTensor, MisalignedColumnsRejected) {
  try {
    quantize_tensor(Tensor({4, 33}));
    FAIL() << "expected AlignmentError";
  } catch (const AlignmentError& e) {
    EXPECT_NE(std::string(e.what()).find("pad"), std::string::npos) << e.what();
  }
}

TEST(Qmatvec, BitwiseEqualsDequantizeThenMatvec) {
  std::mt19937_64 rng(4);
  std::normal_distribution<float> dist;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor w({16, 96}), x({96});
    for (float& v : w.span()) v = dist(rng);
    for (float& v : x.span()) v = dist(rng);
    const QTensor q = quantize_tensor(w);
    EXPECT_EQ(qmatvec(q, x), matvec(dequantize_tensor(q), x));
  }
}

TEST(Qmatvec, LatticeIdentity) {
  Tensor eye({32, 32});
  for (std::size_t i = 0; i < 32; ++i) eye.at(i, i) = 7.0f;
  const QTensor q = quantize_tensor(eye);
  std::mt19937_64 rng(2);
  std::normal_distribution<float> dist;
  Tensor x({32});
  for (float& v : x.span()) v = dist(rng);
  const Tensor y = qmatvec(q, x);
  EXPECT_EQ(y, matvec(eye, x));
}

TEST(Qmatvec, ZeroMatrixGivesZeros) {
  const QTensor q = quantize_tensor(Tensor({3, 64}));
  Tensor x({64});
  for (std::size_t i = 0; i < 64; ++i) x[i] = static_cast<float>(i);
  const Tensor y = qmatvec(q, x);
  for (float v : y.span()) EXPECT_EQ(v, 0.0f);
}

TEST(Qmatvec, ShapeMismatch) {
  const QTensor q = quantize_tensor(Tensor({3, 64}));
  EXPECT_THROW(qmatvec(q, Tensor({32})), DimensionError);
}

}  // namespace
}  // namespace deskllm
