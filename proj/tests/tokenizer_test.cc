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

#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "deskllm/errors.h"

namespace deskllm {
namespace {

using Ids = std::vector<TokenId>;

TEST(Encode, Empty) { EXPECT_TRUE(Tokenizer().encode("").empty()); }

TEST(Encode, RawBytesWithoutMerges) {
  EXPECT_EQ(Tokenizer().encode("hi"), (Ids{104, 105}));
}

TEST(Encode, SingleMerge) {
  const Tokenizer tok = Tokenizer::from_pairs({{104, 105}});
  EXPECT_EQ(tok.encode("hi"), (Ids{259}));
  EXPECT_EQ(tok.encode("hih"), (Ids{259, 104}));
}

TEST(Encode, PriorityBeatsPosition) {
  // "abc": (b,c) has higher priority than (a,b), so b and c merge first.
  const Tokenizer tok = Tokenizer::from_pairs({{'b', 'c'}, {'a', 'b'}});
  EXPECT_EQ(tok.encode("abc"), (Ids{'a', 259}));
}

TEST(Encode, LeftmostOccurrenceOnOverlap) {
  const Tokenizer tok = Tokenizer::from_pairs({{'a', 'a'}});
  EXPECT_EQ(tok.encode("aaa"), (Ids{259, 'a'}));
  EXPECT_EQ(tok.encode("aaaa"), (Ids{259, 259}));
}

TEST(Encode, ChainedMerges) {
  const Tokenizer tok = Tokenizer::from_pairs({{'h', 'i'}, {259, '!'}});
  EXPECT_EQ(tok.encode("hi!hi"), (Ids{260, 259}));
  EXPECT_EQ(tok.decode(Ids{260}), "hi!");
}

TEST(Decode, SpecialsAreInvisible) {
  EXPECT_EQ(Tokenizer().decode(Ids{256, 104, 257}), "h");
}

TEST(Decode, ExpandsMerge) {
  EXPECT_EQ(Tokenizer::from_pairs({{104, 105}}).decode(Ids{259}), "hi");
}

TEST(Decode, UnknownIdThrows) {
  EXPECT_THROW(Tokenizer().decode(Ids{259}), VocabularyError);
  EXPECT_THROW(Tokenizer().decode(Ids{-1}), VocabularyError);
}

TEST(Decode, InvalidBytesBecomeReplacementChar) {
  EXPECT_EQ(Tokenizer().decode(Ids{'a', 0xFF, 0xFE, 'b'}), "a\xEF\xBF\xBD" "b");
}

TEST(MergeTable, RejectsBadTables) {
  EXPECT_THROW(Tokenizer(std::vector<Merge>{{'a', 'b', 260}}), ValidationError);
  EXPECT_THROW(Tokenizer(std::vector<Merge>{{'a', 259, 259}}), ValidationError);
  EXPECT_THROW(Tokenizer(std::vector<Merge>{{kBosId, 'a', 259}}), ValidationError);
}

TEST(MergeTable, ParseMergesTxt) {
  std::istringstream in("# comment\n104 105\n\n259 33\n");
  const Tokenizer tok = Tokenizer::parse_merges_txt(in);
  EXPECT_EQ(tok.vocab_size(), 261u);
  EXPECT_EQ(tok.encode("hi!"), (Ids{260}));
}

TEST(MergeTable, ParseErrorNamesLine) {
  std::istringstream in("104 105\nnot a merge\n");
  try {
    Tokenizer::parse_merges_txt(in);
    FAIL() << "expected LineParseError";
  } catch (const LineParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(MergeTable, AddingMergeKeepsOlderDecodes) {
  const Tokenizer small = default_tokenizer(300);
  const Tokenizer large = default_tokenizer(400);
  for (TokenId id = 0; id < 300; ++id) {
    EXPECT_EQ(small.token_bytes(id), large.token_bytes(id)) << id;
  }
}

std::string random_utf8(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(0, 40);
  std::uniform_int_distribution<int> kind(0, 3);
  std::string s;
  const int n = len(rng);
  for (int i = 0; i < n; ++i) {
    std::uint32_t cp;
    switch (kind(rng)) {
      case 0: cp = std::uniform_int_distribution<std::uint32_t>(0x01, 0x7F)(rng); break;
      case 1: cp = std::uniform_int_distribution<std::uint32_t>(0x80, 0x7FF)(rng); break;
      case 2:
        do {
          cp = std::uniform_int_distribution<std::uint32_t>(0x800, 0xFFFF)(rng);
        } while (cp >= 0xD800 && cp <= 0xDFFF);
        break;
      default: cp = std::uniform_int_distribution<std::uint32_t>(0x10000, 0x10FFFF)(rng);
    }
    if (cp < 0x80) {
      s += static_cast<char>(cp);
    } else if (cp < 0x800) {
      s += static_cast<char>(0xC0 | (cp >> 6));
      s += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
      s += static_cast<char>(0xE0 | (cp >> 12));
      s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      s += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
      s += static_cast<char>(0xF0 | (cp >> 18));
      s += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
      s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      s += static_cast<char>(0x80 | (cp & 0x3F));
    }
  }
  return s;
}

TEST(RoundTrip, RandomUtf8) {
  const Tokenizer tok = default_tokenizer(512);
  std::mt19937_64 rng(77);
  for (int i = 0; i < 2000; ++i) {
    const std::string s = random_utf8(rng);
    const auto ids = tok.encode(s);
    ASSERT_LE(ids.size(), s.size());
    ASSERT_EQ(tok.decode(ids), s);
  }
}

TEST(RoundTrip, EnglishTextCompresses) {
  const Tokenizer tok = default_tokenizer(512);
  const std::string s = "The quick brown fox jumps over the lazy dog. \xF0\x9F\x98\x80";
  const auto ids = tok.encode(s);
  EXPECT_LT(ids.size(), s.size());
  EXPECT_EQ(tok.decode(ids), s);
}

TEST(Utf8, Validation) {
  EXPECT_TRUE(is_valid_utf8("plain \xC3\xA9 \xE2\x82\xAC \xF0\x9F\x98\x80"));
  EXPECT_FALSE(is_valid_utf8("\xC0\xAF"));          // overlong
  EXPECT_FALSE(is_valid_utf8("\xED\xA0\x80"));      // surrogate
  EXPECT_FALSE(is_valid_utf8("\xF4\x90\x80\x80"));  // above U+10FFFF
  EXPECT_FALSE(is_valid_utf8("\xE2\x82"));          // truncated
}

TEST(Utf8, StreamDecoderMatchesBatchForEverySplit) {
  const std::string bytes = "a\xE2\x82\xAC\xFF" "b\xF0\x9F\x98\x80\xE2\x82";
  const std::string expected = sanitize_utf8(bytes);
  for (std::size_t cut = 0; cut <= bytes.size(); ++cut) {
    Utf8StreamDecoder dec;
    std::string out = dec.feed(std::string_view(bytes).substr(0, cut));
    out += dec.feed(std::string_view(bytes).substr(cut));
    out += dec.finish();
    EXPECT_EQ(out, expected) << "cut " << cut;
  }
  Utf8StreamDecoder dec;
  std::string out;
  for (char c : bytes) out += dec.feed(std::string_view(&c, 1));
  out += dec.finish();
  EXPECT_EQ(out, expected);
}

TEST(Learner, DeterministicAndMostFrequentFirst) {
  const auto merges = learn_merges("abababab cd", 2);
  ASSERT_EQ(merges.size(), 2u);
  EXPECT_EQ(merges[0], (std::pair<TokenId, TokenId>{'a', 'b'}));
  EXPECT_EQ(learn_merges("abababab cd", 2), merges);
}

TEST(DefaultTokenizer, ExactVocabSize) {
  EXPECT_EQ(default_tokenizer(259).vocab_size(), 259u);
  EXPECT_EQ(default_tokenizer(512).vocab_size(), 512u);
  EXPECT_EQ(default_tokenizer(2000).vocab_size(), 2000u);
}

}  // namespace
}  // namespace deskllm
