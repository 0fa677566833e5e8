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

#ifndef DESKLLM_TENSOR_H_
#define DESKLLM_TENSOR_H_

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace deskllm {

// Dense row-major f32 array of rank 1 or 2.
class Tensor {
 public:
  Tensor() = default;
  // Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::size_t> dims);
  Tensor(std::vector<std::size_t> dims, std::vector<float> data);

  static Tensor vector(std::vector<float> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<float>> rows);
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }
  // Row count for matrices, length for vectors.
  std::size_t rows() const { return dims_.empty() ? 0 : dims_[0]; }
  std::size_t cols() const { return dims_.size() == 2 ? dims_[1] : 1; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> span() { return data_; }
  std::span<const float> span() const { return data_; }
  const std::vector<float>& values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }
  float& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<float> row(std::size_t r);
  std::span<const float> row(std::size_t r) const;

  // Bitwise equality of shape and contents.
  bool operator==(const Tensor& other) const;

  std::string shape_string() const;

 private:
  std::vector<std::size_t> dims_;
  std::vector<float> data_;
};

// c[i][j] = sum_t a[i][t] * b[t][j], accumulated in f32 in ascending t.
Tensor matmul(const Tensor& a, const Tensor& b);

// y = a * x for a [m x k] and x [k]; accumulation identical to matmul with
// x viewed as a [k x 1] column.
Tensor matvec(const Tensor& a, const Tensor& x);
void matvec_into(const Tensor& a, std::span<const float> x, std::span<float> y);

Tensor softmax(const Tensor& v);
void softmax_inplace(std::span<float> v);

Tensor rmsnorm(const Tensor& x, const Tensor& w, float eps);
void rmsnorm_into(std::span<const float> x, std::span<const float> w, float eps,
                  std::span<float> y);

Tensor silu(const Tensor& x);
inline float silu(float x) { return x / (1.0f + std::exp(-x)); }

}  // namespace deskllm

#endif  // DESKLLM_TENSOR_H_
