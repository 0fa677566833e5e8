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

#ifndef DESKLLM_ERRORS_H_
#define DESKLLM_ERRORS_H_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace deskllm {

// Root of every error thrown by the library. Callers that only want a
// message can catch this; callers that need to react catch a subclass.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or rank mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Non-finite value handed to the 4-bit codec.
class EncodingError : public Error {
 public:
  using Error::Error;
};

// Column count not a multiple of the quantization block size.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

// Token id outside the tokenizer's vocabulary.
class VocabularyError : public Error {
 public:
  using Error::Error;
};

// Sequence would exceed the model's context window.
class ContextOverflowError : public Error {
 public:
  using Error::Error;
};

// LoRA adapter incompatible with the weights it is applied to.
class AdapterError : public Error {
 public:
  using Error::Error;
};

// Invalid argument or configuration value.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Template references a slot with no values.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// No item of an evaluation task could be scored.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

// Line-oriented input (JSONL, merges.txt, config) that fails to parse.
class LineParseError : public Error {
 public:
  LineParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Binary container parse failure, located by byte offset.
class ContainerError : public Error {
 public:
  enum class Kind {
    kBadMagic,
    kBadVersion,
    kBadSection,
    kBadConfig,
    kTruncated,
    kDuplicateTensor,
    kBadTensor,
    kMissingTensor,
    kIo,
  };

  ContainerError(Kind kind, std::uint64_t offset, const std::string& what)
      : Error(std::string(kind_name(kind)) + " at offset " +
              std::to_string(offset) + ": " + what),
        kind_(kind),
        offset_(offset) {}

  Kind kind() const { return kind_; }
  std::uint64_t offset() const { return offset_; }

  static const char* kind_name(Kind kind) {
    switch (kind) {
      case Kind::kBadMagic: return "bad magic";
      case Kind::kBadVersion: return "unsupported version";
      case Kind::kBadSection: return "bad section tag";
      case Kind::kBadConfig: return "bad config";
      case Kind::kTruncated: return "truncated file";
      case Kind::kDuplicateTensor: return "duplicate tensor";
      case Kind::kBadTensor: return "bad tensor entry";
      case Kind::kMissingTensor: return "missing tensor";
      case Kind::kIo: return "i/o error";
    }
    return "container error";
  }

 private:
  Kind kind_;
  std::uint64_t offset_;
};

}  // namespace deskllm

#endif  // DESKLLM_ERRORS_H_
