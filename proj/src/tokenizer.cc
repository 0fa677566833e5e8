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

#include "deskllm/tokenizer.h"

#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "deskllm/errors.h"

namespace deskllm {
namespace {

constexpr std::string_view kReplacement = "\xEF\xBF\xBD";

// Sample text for default merge tables.
constexpr std::string_view kMergeCorpus =
    "The quick brown fox jumps over the lazy dog. A language model assigns "
    "probabilities to sequences of words, and the best models are trained on "
    "large collections of prompt and response pairs. When the model reads a "
    "prompt it predicts the next token, then the next, until it reaches the "
    "end of the response. People often ask the assistant to write a story "
    "about a dragon in the style of a famous poet, to explain how a computer "
    "works, or to answer a question about history and science. The answer "
    "should be helpful, honest, and short enough to read quickly. Running "
    "these models on an ordinary laptop means that the weights must be small, "
    "so each weight is stored with only four bits and a shared scale for "
    "every block of thirty two values. The capital of France is Paris. The "
    "capital of Italy is Rome. Water boils at one hundred degrees at sea "
    "level. There are seven days in a week and twelve months in a year. "
    "What is the meaning of this sentence? How do I sort a list in Python? "
    "Write a poem about the ocean. Write a short story about a robot who "
    "learns to paint. Explain the difference between a process and a thread. "
    "Summarize the following paragraph in one sentence. Translate the phrase "
    "into French. Give three reasons why exercise is good for your health. "
    "### Prompt:\n### Response:\n";

}  // namespace

Tokenizer::Tokenizer(std::vector<Merge> merges) : merges_(std::move(merges)) {
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    const Merge& m = merges_[i];
    const TokenId expected = kFirstMergeId + static_cast<TokenId>(i);
    if (m.new_id != expected) {
      throw ValidationError("merge " + std::to_string(i) + " assigns id " +
                            std::to_string(m.new_id) + ", expected " +
                            std::to_string(expected));
    }
    auto defined = [&](TokenId id) {
      return id >= 0 && id < expected && id != kBosId && id != kEosId &&
             id != kPadId;
    };
    if (!defined(m.left) || !defined(m.right)) {
      throw ValidationError("merge " + std::to_string(i) +
                            " references an undefined or special id");
    }
  }
  build_tables();
}

void Tokenizer::build_tables() {
  rank_.clear();
  expansion_.assign(vocab_size(), std::string());
  for (int b = 0; b < 256; ++b) expansion_[b] = std::string(1, static_cast<char>(b));
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    const Merge& m = merges_[i];
    expansion_[m.new_id] = expansion_[m.left] + expansion_[m.right];
    // First occurrence wins: a repeated pair can never fire twice.
    rank_.emplace(pair_key(m.left, m.right), i);
  }
}

Tokenizer Tokenizer::from_pairs(
    const std::vector<std::pair<TokenId, TokenId>>& pairs) {
  std::vector<Merge> merges;
  merges.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    merges.push_back({pairs[i].first, pairs[i].second,
                      kFirstMergeId + static_cast<TokenId>(i)});
  }
  return Tokenizer(std::move(merges));
}

Tokenizer Tokenizer::parse_merges_txt(std::istream& in) {
  std::vector<std::pair<TokenId, TokenId>> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    long long left = 0, right = 0;
    std::string extra;
    if (!(fields >> left >> right) || (fields >> extra)) {
      throw LineParseError(line_no, "expected `left_id right_id`");
    }
    if (left < 0 || right < 0 || left > std::numeric_limits<TokenId>::max() ||
        right > std::numeric_limits<TokenId>::max()) {
      throw LineParseError(line_no, "token id out of range");
    }
    pairs.emplace_back(static_cast<TokenId>(left), static_cast<TokenId>(right));
  }
  try {
    return from_pairs(pairs);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("merges.txt: ") + e.what());
  }
}

Tokenizer Tokenizer::load_merges_txt(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open merges file " + path);
  return parse_merges_txt(in);
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids(text.begin(), text.end());
  for (TokenId& id : ids) id = static_cast<unsigned char>(id);
  if (merges_.empty()) return ids;
  for (;;) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      auto it = rank_.find(pair_key(ids[i], ids[i + 1]));
      if (it != rank_.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    // Replacing every non-overlapping occurrence left to right equals
    // applying the leftmost one repeatedly: merges that involve the new id
    // always rank lower, so no higher-priority pair can appear in between.
    const Merge& m = merges_[best_rank];
    std::size_t out = 0;
    for (std::size_t i = 0; i < ids.size();) {
      if (i + 1 < ids.size() && ids[i] == m.left && ids[i + 1] == m.right) {
        ids[out++] = m.new_id;
        i += 2;
      } else {
        ids[out++] = ids[i++];
      }
    }
    ids.resize(out);
  }
  return ids;
}

const std::string& Tokenizer::token_bytes(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_size()) {
    throw VocabularyError("unknown token id " + std::to_string(id) +
                          " (vocabulary size " + std::to_string(vocab_size()) +
                          ")");
  }
  return expansion_[id];
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string bytes;
  for (TokenId id : ids) bytes += token_bytes(id);
  return sanitize_utf8(bytes);
}

void Utf8StreamDecoder::emit_bad(std::string& out) {
  if (in_bad_run_) {
    out += kReplacement;
    in_bad_run_ = false;
  }
}

void Utf8StreamDecoder::push(unsigned char c, std::string& out) {
  if (!pending_.empty()) {
    const auto lead = static_cast<unsigned char>(pending_[0]);
    unsigned char lo = 0x80, hi = 0xBF;
    if (pending_.size() == 1) {
      if (lead == 0xE0) lo = 0xA0;
      if (lead == 0xED) hi = 0x9F;
      if (lead == 0xF0) lo = 0x90;
      if (lead == 0xF4) hi = 0x8F;
    }
    if (c >= lo && c <= hi) {
      pending_.push_back(static_cast<char>(c));
      if (pending_.size() == need_) {
        emit_bad(out);
        out += pending_;
        pending_.clear();
      }
      return;
    }
    // Truncated sequence joins the invalid run; reconsider c on its own.
    pending_.clear();
    in_bad_run_ = true;
  }
  if (c < 0x80) {
    emit_bad(out);
    out.push_back(static_cast<char>(c));
  } else if (c >= 0xC2 && c <= 0xDF) {
    pending_.assign(1, static_cast<char>(c));
    need_ = 2;
  } else if (c >= 0xE0 && c <= 0xEF) {
    pending_.assign(1, static_cast<char>(c));
    need_ = 3;
  } else if (c >= 0xF0 && c <= 0xF4) {
    pending_.assign(1, static_cast<char>(c));
    need_ = 4;
  } else {
    in_bad_run_ = true;
  }
}

std::string Utf8StreamDecoder::feed(std::string_view bytes) {
  std::string out;
  for (char ch : bytes) push(static_cast<unsigned char>(ch), out);
  return out;
}

std::string Utf8StreamDecoder::finish() {
  std::string out;
  if (!pending_.empty()) {
    pending_.clear();
    in_bad_run_ = true;
  }
  emit_bad(out);
  return out;
}

std::string sanitize_utf8(std::string_view bytes) {
  Utf8StreamDecoder decoder;
  std::string out = decoder.feed(bytes);
  out += decoder.finish();
  return out;
}

bool is_valid_utf8(std::string_view bytes) {
  return sanitize_utf8(bytes) == bytes &&
         bytes.find(kReplacement) == std::string_view::npos;
}

std::vector<std::pair<TokenId, TokenId>> learn_merges(std::string_view corpus,
                                                      std::size_t n_merges) {
  std::vector<TokenId> seq(corpus.begin(), corpus.end());
  for (TokenId& id : seq) id = static_cast<unsigned char>(id);
  std::vector<std::pair<TokenId, TokenId>> merges;
  TokenId next_id = kFirstMergeId;
  while (merges.size() < n_merges) {
    std::map<std::pair<TokenId, TokenId>, std::size_t> counts;
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      ++counts[{seq[i], seq[i + 1]}];
    }
    if (counts.empty()) break;
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const auto pair = best->first;
    merges.push_back(pair);
    std::size_t out = 0;
    for (std::size_t i = 0; i < seq.size();) {
      if (i + 1 < seq.size() && seq[i] == pair.first && seq[i + 1] == pair.second) {
        seq[out++] = next_id;
        i += 2;
      } else {
        seq[out++] = seq[i++];
      }
    }
    seq.resize(out);
    ++next_id;
  }
  return merges;
}

Tokenizer default_tokenizer(std::size_t vocab_size) {
  if (vocab_size < static_cast<std::size_t>(kFirstMergeId)) {
    throw ValidationError("vocab_size must be at least 259");
  }
  const std::size_t n_merges = vocab_size - kFirstMergeId;
  auto pairs = learn_merges(kMergeCorpus, n_merges);
  // Corpus exhausted: chain extra merges onto the space byte so every id in
  // the vocabulary stays decodable.
  while (pairs.size() < n_merges) {
    const TokenId prev = pairs.empty()
                             ? TokenId{' '}
                             : kFirstMergeId + static_cast<TokenId>(pairs.size()) - 1;
    pairs.emplace_back(prev, TokenId{' '});
  }
  return Tokenizer::from_pairs(pairs);
}

}  // namespace deskllm
