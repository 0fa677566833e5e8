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

#ifndef DESKLLM_CURATE_H_
#define DESKLLM_CURATE_H_

#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deskllm/prompt_pair.h"

namespace deskllm {

struct CurationConfig {
  // Case-insensitive substrings marking a declined answer.
  std::vector<std::string> refusal_patterns = {
      "as an ai language model", "i cannot", "i'm sorry, but"};
  std::size_t min_chars = 16;
  std::size_t min_words = 3;
  double near_dup_jaccard = 0.9;
  std::size_t shingle_words = 3;
  std::size_t minhash_permutations = 128;
  std::size_t rows_per_band = 8;
  std::uint64_t seed = 0;
  // Pairs whose source matches one of these are removed before any filter.
  std::vector<std::string> drop_sources;

  void validate() const;
};

// Newline-delimited flat JSON objects with string fields `prompt`,
// `response` and optional `source`. Blank lines are skipped but still count
// toward line numbers. Lone UTF-16 surrogate escapes are decoded to their
// 3-byte form so the malformed filter can see them.
std::vector<PromptResponsePair> ingest(const std::string& path);
std::vector<PromptResponsePair> ingest_stream(std::istream& in);
void write_pairs(std::ostream& out, std::span<const PromptResponsePair> pairs);

struct FilterResult {
  std::vector<PromptResponsePair> kept;
  std::vector<PromptResponsePair> removed;
};

FilterResult filter_refusals(std::span<const PromptResponsePair> pairs,
                             const CurationConfig& config);
// Removes empty (after trimming) prompts or responses, invalid UTF-8
// (including encoded surrogates), and control characters other than tab
// and newline.
FilterResult filter_malformed(std::span<const PromptResponsePair> pairs);
FilterResult filter_short(std::span<const PromptResponsePair> pairs,
                          const CurationConfig& config);

struct DedupResult {
  std::vector<PromptResponsePair> kept;
  std::vector<PromptResponsePair> removed_exact;
  std::vector<PromptResponsePair> removed_near;
};

// Exact stage on normalized prompt + "\n" + response, then MinHash/LSH
// candidate generation verified by exact shingle Jaccard. Keeps the lowest
// id of every duplicate cluster.
DedupResult dedup(std::span<const PromptResponsePair> pairs,
                  const CurationConfig& config);

// Lowercase ASCII, whitespace runs collapsed to one space, trimmed.
std::string normalize_text(std::string_view text);
// Sorted, unique hashes of the word shingles of already-normalized text.
std::vector<std::uint64_t> shingle_set(std::string_view normalized,
                                       std::size_t shingle_words);
double jaccard(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);
std::string dedup_key(const PromptResponsePair& pair);

struct CurationReport {
  struct Counts {
    std::size_t input = 0;
    std::size_t removed_source = 0;
    std::size_t removed_refusal = 0;
    std::size_t removed_malformed = 0;
    std::size_t removed_short = 0;
    std::size_t removed_exact_dup = 0;
    std::size_t removed_near_dup = 0;
    std::size_t kept = 0;
    std::size_t removed_total() const {
      return removed_source + removed_refusal + removed_malformed +
             removed_short + removed_exact_dup + removed_near_dup;
    }
  };

  Counts totals;
  std::map<std::string, Counts> by_source;
  // First five removed pairs per stage name.
  std::map<std::string, std::vector<PromptResponsePair>> examples;

  std::string to_json() const;
};

struct CurationOutput {
  std::vector<PromptResponsePair> kept;
  CurationReport report;
};

// Stage order: dropped sources, refusal, malformed, short, dedup. Kept
// pairs preserve input order.
CurationOutput curate_pipeline(std::span<const PromptResponsePair> pairs,
                               const CurationConfig& config);

// Template with bracketed slot names, e.g. "Write a [TYPE] about [NOUN]".
struct SchemaTemplate {
  std::string text;
  std::map<std::string, std::vector<std::string>> slots;
};

// Slot names in order of first appearance.
std::vector<std::string> template_slots(std::string_view text);

// Cartesian product of slot values (first slot varies slowest). When the
// product exceeds `limit` (0 = unlimited), a seeded uniform sample of
// `limit` combinations without replacement, kept in product order.
std::vector<std::string> schema_expand(const SchemaTemplate& schema,
                                       std::size_t limit, std::uint64_t seed);

struct MapPoint {
  std::uint64_t id = 0;
  double x = 0.0;
  double y = 0.0;
};

inline constexpr std::size_t kProjectionDims = 1024;

// Hashed term-frequency features, mean-centered, projected on the top two
// principal directions found by power iteration with deflation.
std::vector<MapPoint> project_2d(std::span<const PromptResponsePair> pairs,
                                 std::uint64_t seed = 0);
void write_projection_csv(std::ostream& out, std::span<const MapPoint> points);

}  // namespace deskllm

#endif  // DESKLLM_CURATE_H_
