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

#include "deskllm/tensor.h"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <numeric>
#include <sstream>

#include "deskllm/errors.h"
#include "deskllm/parallel.h"

namespace deskllm {
namespace {

std::size_t product(const std::vector<std::size_t>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         std::multiplies<>());
}

void check_rank(const std::vector<std::size_t>& dims) {
  if (dims.empty() || dims.size() > 2) {
    throw DimensionError("tensor rank must be 1 or 2, got " +
                         std::to_string(dims.size()));
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  check_rank(dims_);
  data_.assign(product(dims_), 0.0f);
}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<float> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  check_rank(dims_);
  if (data_.size() != product(dims_)) {
    throw DimensionError("tensor " + shape_string() + " needs " +
                         std::to_string(product(dims_)) + " values, got " +
                         std::to_string(data_.size()));
  }
}

Tensor Tensor::vector(std::vector<float> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(
    std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t n_rows = rows.size();
  const std::size_t n_cols = n_rows == 0 ? 0 : rows.begin()->size();
  std::vector<float> data;
  data.reserve(n_rows * n_cols);
  for (const auto& r : rows) {
    if (r.size() != n_cols) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({n_rows, n_cols}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0f;
  return t;
}

std::span<float> Tensor::row(std::size_t r) {
  return std::span<float>(data_).subspan(r * cols(), cols());
}

std::span<const float> Tensor::row(std::size_t r) const {
  return std::span<const float>(data_).subspan(r * cols(), cols());
}

bool Tensor::operator==(const Tensor& other) const {
  if (dims_ != other.dims_) return false;
  // Bitwise: distinguishes -0.0 from 0.0 and compares NaN payloads.
  return std::equal(data_.begin(), data_.end(), other.data_.begin(),
                    [](float a, float b) {
                      return std::bit_cast<std::uint32_t>(a) ==
                             std::bit_cast<std::uint32_t>(b);
                    });
}

std::string Tensor::shape_string() const {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) out << 'x';
    out << dims_[i];
  }
  out << ']';
  return out.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul shape mismatch: " + a.shape_string() +
                         " x " + b.shape_string());
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  parallel_for(m, k * n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const float* ar = a.data() + i * k;
      float* cr = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        float acc = 0.0f;
        for (std::size_t t = 0; t < k; ++t) acc += ar[t] * b.data()[t * n + j];
        cr[j] = acc;
      }
    }
  });
  return c;
}

void matvec_into(const Tensor& a, std::span<const float> x,
                 std::span<float> y) {
  if (a.rank() != 2 || a.cols() != x.size() || a.rows() != y.size()) {
    throw DimensionError("matvec shape mismatch: " + a.shape_string() +
                         " x [" + std::to_string(x.size()) + "] -> [" +
                         std::to_string(y.size()) + "]");
  }
  const std::size_t k = a.cols();
  parallel_for(a.rows(), k, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const float* ar = a.data() + i * k;
      float acc = 0.0f;
      for (std::size_t t = 0; t < k; ++t) acc += ar[t] * x[t];
      y[i] = acc;
    }
  });
}

Tensor matvec(const Tensor& a, const Tensor& x) {
  if (x.rank() != 1) {
    throw DimensionError("matvec expects a vector, got " + x.shape_string());
  }
  Tensor y({a.rank() == 2 ? a.rows() : 0});
  matvec_into(a, x.span(), y.span());
  return y;
}

void softmax_inplace(std::span<float> v) {
  if (v.empty()) throw DimensionError("softmax of an empty vector");
  const float max = *std::max_element(v.begin(), v.end());
  float sum = 0.0f;
  for (float& e : v) {
    e = std::exp(e - max);
    sum += e;
  }
  const float inv = 1.0f / sum;
  for (float& e : v) e *= inv;
}

Tensor softmax(const Tensor& v) {
  if (v.rank() != 1) {
    throw DimensionError("softmax expects a vector, got " + v.shape_string());
  }
  Tensor out = v;
  softmax_inplace(out.span());
  return out;
}

void rmsnorm_into(std::span<const float> x, std::span<const float> w,
                  float eps, std::span<float> y) {
  if (x.size() != w.size() || x.size() != y.size()) {
    throw DimensionError("rmsnorm shape mismatch: x[" +
                         std::to_string(x.size()) + "] w[" +
                         std::to_string(w.size()) + "]");
  }
  if (x.empty()) return;
  float ss = 0.0f;
  for (float e : x) ss += e * e;
  const float mean = ss / static_cast<float>(x.size());
  const float denom = std::sqrt(mean + eps);
  // All-zero input with eps == 0 maps to zeros instead of 0/0.
  if (denom == 0.0f) {
    std::fill(y.begin(), y.end(), 0.0f);
    return;
  }
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / denom * w[i];
}

Tensor rmsnorm(const Tensor& x, const Tensor& w, float eps) {
  if (x.dims() != w.dims() || x.rank() != 1) {
    throw DimensionError("rmsnorm shape mismatch: " + x.shape_string() +
                         " vs " + w.shape_string());
  }
  Tensor y(x.dims());
  rmsnorm_into(x.span(), w.span(), eps, y.span());
  return y;
}

Tensor silu(const Tensor& x) {
  Tensor y = x;
  for (float& e : y.span()) e = silu(e);
  return y;
}

}  // namespace deskllm
