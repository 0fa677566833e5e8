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

#ifndef DESKLLM_TOKENIZER_H_
#define DESKLLM_TOKENIZER_H_

#include <cstddef>
#include <cstdint>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace deskllm {

using TokenId = std::int32_t;

inline constexpr TokenId kBosId = 256;
inline constexpr TokenId kEosId = 257;
inline constexpr TokenId kPadId = 258;
inline constexpr TokenId kFirstMergeId = 259;

struct Merge {
  TokenId left = 0;
  TokenId right = 0;
  TokenId new_id = 0;

  bool operator==(const Merge&) const = default;
};

// Byte-level BPE. Ids 0-255 are raw bytes, 256-258 are BOS/EOS/PAD, and
// merge i produces id 259 + i. Table order is merge priority.
class Tokenizer {
 public:
  Tokenizer() { build_tables(); }
  // Throws ValidationError unless ids are consecutive from 259 and every
  // merge references already-defined ids.
  explicit Tokenizer(std::vector<Merge> merges);

  // Assigns ids 259, 260, ... in table order.
  static Tokenizer from_pairs(
      const std::vector<std::pair<TokenId, TokenId>>& pairs);

  // `left_id right_id` per line, priority = line order. Blank lines and lines
  // starting with '#' are skipped.
  static Tokenizer parse_merges_txt(std::istream& in);
  static Tokenizer load_merges_txt(const std::string& path);

  std::vector<TokenId> encode(std::string_view text) const;
  // Specials decode to nothing; invalid UTF-8 byte runs become U+FFFD.
  // Throws VocabularyError for ids outside the vocabulary.
  std::string decode(std::span<const TokenId> ids) const;

  // Raw bytes of one token (empty for specials).
  const std::string& token_bytes(TokenId id) const;

  std::size_t vocab_size() const { return kFirstMergeId + merges_.size(); }
  const std::vector<Merge>& merges() const { return merges_; }

  bool operator==(const Tokenizer& other) const {
    return merges_ == other.merges_;
  }

 private:
  static std::uint64_t pair_key(TokenId l, TokenId r) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(l)) << 32) |
           static_cast<std::uint32_t>(r);
  }

  std::vector<Merge> merges_;
  std::unordered_map<std::uint64_t, std::size_t> rank_;
  std::vector<std::string> expansion_;
  void build_tables();
};

// Incremental UTF-8 sanitizer. Emits text as soon as it is determined, so
// the concatenation of feed() results plus finish() equals
// sanitize_utf8(all bytes) regardless of how the input was split.
class Utf8StreamDecoder {
 public:
  std::string feed(std::string_view bytes);
  std::string finish();

 private:
  void push(unsigned char c, std::string& out);
  void emit_bad(std::string& out);

  std::string pending_;
  std::size_t need_ = 0;
  bool in_bad_run_ = false;
};

std::string sanitize_utf8(std::string_view bytes);
bool is_valid_utf8(std::string_view bytes);

// Frequency-based merge learner (most frequent adjacent pair, ties broken by
// smaller (left, right)). A convenience for building micro models; no
// compatibility guarantee.
std::vector<std::pair<TokenId, TokenId>> learn_merges(std::string_view corpus,
                                                      std::size_t n_merges);

// Tokenizer with exactly vocab_size - 259 merges learned from a small
// built-in English sample.
Tokenizer default_tokenizer(std::size_t vocab_size);

}  // namespace deskllm

#endif  // DESKLLM_TOKENIZER_H_
