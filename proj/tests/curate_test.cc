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

#include "deskllm/curate.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <gtest/gtest.h>
#include "json.hpp"

#include "corpus.h"
#include "deskllm/errors.h"
#include "test_util.h"

namespace deskllm {
namespace {

using testing::oracle_jaccard;
using testing::oracle_shingles;

PromptResponsePair pr(std::string prompt, std::string response, std::uint64_t id = 0,
                      std::string source = "") {
  return {std::move(prompt), std::move(response), std::move(source), id};
}

std::vector<PromptResponsePair> parse(const std::string& text) {
  std::istringstream in(text);
  return ingest_stream(in);
}

std::size_t error_line(const std::string& text) {
  try {
    parse(text);
  } catch (const LineParseError& e) {
    return e.line();
  }
  ADD_FAILURE() << "no parse error";
  return 0;
}

std::vector<std::uint64_t> ids(std::span<const PromptResponsePair> pairs) {
  std::vector<std::uint64_t> out;
  for (const auto& p : pairs) out.push_back(p.id);
  return out;
}

TEST(Ingest, EmptyInput) { EXPECT_TRUE(parse("").empty()); }

TEST(Ingest, OrdinalIds) {
  const auto pairs = parse(
      "{\"prompt\":\"a\",\"response\":\"b\",\"source\":\"s\"}\n"
      "{\"prompt\":\"c\",\"response\":\"d\"}\n"
      "\n"
      "{\"response\":\"f\",\"prompt\":\"e\"}\r\n");
  ASSERT_EQ(pairs.size(), 3u);
  EXPECT_EQ(ids(pairs), (std::vector<std::uint64_t>{0, 1, 2}));
  EXPECT_EQ(pairs[0].source, "s");
  EXPECT_EQ(pairs[1].source, "");
  EXPECT_EQ(pairs[2].prompt, "e");
  EXPECT_EQ(pairs[2].response, "f");
}

TEST(Ingest, MissingResponseNamesLine) {
  EXPECT_EQ(error_line("{\"prompt\":\"a\",\"response\":\"b\"}\n{\"prompt\":\"c\"}\n"), 2u);
}

TEST(Ingest, MalformedLines) {
  EXPECT_EQ(error_line("{\"prompt\":\"a\",\"response\":\"b\"}\n\n{\"prompt\":\"a\",\n"), 3u);
  EXPECT_EQ(error_line("[1,2]\n"), 1u);
  EXPECT_EQ(error_line("{\"prompt\":\"a\",\"response\":{\"x\":1}}\n"), 1u);
  EXPECT_EQ(error_line("{\"prompt\":\"a\",\"response\":7}\n"), 1u);
  EXPECT_EQ(error_line("{\"prompt\":\"a\",\"prompt\":\"b\",\"response\":\"c\"}\n"), 1u);
  EXPECT_EQ(error_line("{\"prompt\":\"a\",\"response\":\"c\"} trailing\n"), 1u);
  EXPECT_EQ(error_line("{\"prompt\":\"a\\q\",\"response\":\"c\"}\n"), 1u);
}

TEST(Ingest, EscapesAndSurrogates) {
  const auto pairs = parse(
      "{\"prompt\":\"tab\\there \\u00e9 \\ud83d\\ude00\",\"response\":\"lone \\ud800 x\"}\n");
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].prompt, "tab\there \xC3\xA9 \xF0\x9F\x98\x80");
  EXPECT_EQ(pairs[0].response, "lone \xED\xA0\x80 x");
  // The lone surrogate survives ingest and is caught by the malformed filter.
  EXPECT_EQ(filter_malformed(pairs).removed.size(), 1u);
}

TEST(Ingest, WriteRoundTrip) {
  std::vector<PromptResponsePair> pairs = {
      pr("quote \" backslash \\ newline\n", "ctrl \x01 tab\t", 0, "src"),
      pr("\xE2\x82\xAC euro", "plain", 1, "")};
  std::ostringstream out;
  write_pairs(out, pairs);
  EXPECT_EQ(parse(out.str()), pairs);
}

TEST(FilterRefusals, Examples) {
  const CurationConfig config;
  const std::vector<PromptResponsePair> pairs = {
      pr("q", "As an AI Language Model, I cannot help with that.", 0),
      pr("q", "The capital of France is Paris, a city...", 1),
      pr("q", "Well, I'M SORRY, BUT no.", 2)};
  const auto r = filter_refusals(pairs, config);
  EXPECT_EQ(ids(r.kept), (std::vector<std::uint64_t>{1}));
  EXPECT_EQ(ids(r.removed), (std::vector<std::uint64_t>{0, 2}));
  CurationConfig none;
  none.refusal_patterns.clear();
  EXPECT_EQ(filter_refusals(pairs, none).kept.size(), 3u);
}

TEST(FilterMalformed, Examples) {
  using namespace std::string_literals;
  const std::vector<PromptResponsePair> pairs = {
      pr("q", "", 0),
      pr("q", "ok\0ok"s, 1),
      pr("q", "line one\nline two\twith tab", 2),
      pr("   ", "fine answer", 3),
      pr("q", " \n\t ", 4),
      pr("q", "bad \xFF byte", 5),
      pr("q", "del \x7F char", 6),
      pr("q", "carriage\r\nreturn", 7)};
  const auto r = filter_malformed(pairs);
  EXPECT_EQ(ids(r.kept), (std::vector<std::uint64_t>{2}));
}

TEST(FilterShort, Examples) {
  const CurationConfig config;
  const std::vector<PromptResponsePair> pairs = {
      pr("q", "Paris", 0), pr("q", "It is Paris, France.", 1), pr("q", "a b c d e f", 2),
      pr("q", "  Three words here  ", 3)};
  EXPECT_EQ(ids(filter_short(pairs, config).kept), (std::vector<std::uint64_t>{1, 3}));
  CurationConfig loose;
  loose.min_words = 1;
  loose.min_chars = 1;
  EXPECT_EQ(filter_short(filter_malformed(pairs).kept, loose).removed.size(), 0u);
}

TEST(FilterShort, CountsCharactersNotBytes) {
  CurationConfig config;
  config.min_words = 1;
  config.min_chars = 4;
  // Three two-byte characters: six bytes, three characters.
  const std::vector<PromptResponsePair> pairs = {pr("q", "\xC3\xA9\xC3\xA9\xC3\xA9", 0)};
  EXPECT_EQ(filter_short(pairs, config).removed.size(), 1u);
}

TEST(Normalize, LowercaseAndCollapse) {
  EXPECT_EQ(normalize_text("  Hello\t\tWORLD \n x "), "hello world x");
  EXPECT_EQ(dedup_key(pr("A  b", "C")), "a b c");
}

TEST(Dedup, ExactCopies) {
  const std::vector<PromptResponsePair> pairs = {
      pr("What is two plus two", "The answer is four, of course", 0),
      pr("What is two plus two", "The answer is four, of course", 1),
      pr("what is  TWO plus two", "the answer is four,   of course", 2),
      pr("Something else", "Entirely different response text", 3)};
  const auto r = dedup(pairs, CurationConfig{});
  EXPECT_EQ(ids(r.kept), (std::vector<std::uint64_t>{0, 3}));
  EXPECT_EQ(ids(r.removed_exact), (std::vector<std::uint64_t>{1, 2}));
  EXPECT_TRUE(r.removed_near.empty());
}

TEST(Dedup, KeepsLowestIdOfNearCluster) {
  std::mt19937_64 rng(3);
  const std::string base = testing::random_words(rng, 60);
  // Reverse input order: the lowest id must survive regardless.
  const std::vector<PromptResponsePair> pairs = {
      pr("p", base + " tail", 9), pr("p", base + " other", 4), pr("p", base, 7)};
  const auto r = dedup(pairs, CurationConfig{});
  EXPECT_EQ(ids(r.kept), (std::vector<std::uint64_t>{4}));
  EXPECT_EQ(r.removed_near.size(), 2u);
}

TEST(Dedup, Idempotent) {
  const auto corpus = testing::paraphrase_corpus(120, 30, 20, 5);
  const CurationConfig config;
  const auto once = dedup(corpus, config);
  const auto twice = dedup(once.kept, config);
  EXPECT_EQ(twice.kept, once.kept);
  EXPECT_TRUE(twice.removed_exact.empty());
  EXPECT_TRUE(twice.removed_near.empty());
}

TEST(Dedup, MatchesBruteForceOracle) {
  const auto corpus = testing::paraphrase_corpus(200, 60, 40, 11);
  const CurationConfig config;
  std::vector<std::set<std::string>> sh;
  for (const auto& p : corpus) sh.push_back(oracle_shingles(p));
  std::set<std::uint64_t> must_remove;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (std::size_t j = i + 1; j < corpus.size(); ++j) {
      const double jac = oracle_jaccard(sh[i], sh[j]);
      ASSERT_FALSE(jac >= 0.9 && jac < 0.95) << "corpus has an ambiguous pair";
      if (jac >= 0.95) must_remove.insert(std::max(corpus[i].id, corpus[j].id));
    }
  }
  EXPECT_EQ(must_remove.size(), 60u);
  const auto r = dedup(corpus, config);
  std::set<std::uint64_t> removed;
  for (const auto& p : r.removed_near) removed.insert(p.id);
  for (const auto& p : r.removed_exact) removed.insert(p.id);
  EXPECT_EQ(removed, must_remove);
}

TEST(Dedup, ShingleHelpers) {
  EXPECT_EQ(shingle_set("a b", 3).size(), 1u);
  EXPECT_EQ(shingle_set("a b c d", 3).size(), 2u);
  EXPECT_TRUE(shingle_set("", 3).empty());
  const auto a = shingle_set("a b c d e", 2);
  const auto b = shingle_set("a b c d f", 2);
  EXPECT_DOUBLE_EQ(jaccard(a, b), 3.0 / 5.0);
  EXPECT_DOUBLE_EQ(jaccard({}, {}), 1.0);
}

TEST(Pipeline, PlantedCounts) {
  const auto c = testing::planted_corpus(650, 100, 50, 200, 17);
  const auto out = curate_pipeline(c.pairs, CurationConfig{});
  const auto& t = out.report.totals;
  EXPECT_EQ(t.input, 1000u);
  EXPECT_EQ(t.removed_refusal, 100u);
  EXPECT_EQ(t.removed_malformed, 0u);
  EXPECT_EQ(t.removed_short, 50u);
  EXPECT_EQ(t.removed_exact_dup, 200u);
  EXPECT_EQ(t.removed_near_dup, 0u);
  EXPECT_EQ(t.kept, 650u);
  EXPECT_EQ(t.input, t.kept + t.removed_total());
  // Kept pairs are exactly the clean originals, in input order.
  std::vector<std::uint64_t> expect(650);
  std::iota(expect.begin(), expect.end(), 0);
  EXPECT_EQ(ids(out.kept), expect);
  std::size_t per_source_input = 0;
  for (const auto& [name, counts] : out.report.by_source) {
    EXPECT_EQ(counts.input, counts.kept + counts.removed_total()) << name;
    per_source_input += counts.input;
  }
  EXPECT_EQ(per_source_input, 1000u);
}

TEST(Pipeline, CleanCorpusUntouched) {
  const auto c = testing::planted_corpus(80, 0, 0, 0, 2);
  const auto out = curate_pipeline(c.pairs, CurationConfig{});
  EXPECT_EQ(out.kept, c.pairs);
  EXPECT_EQ(out.report.totals.removed_total(), 0u);
}

TEST(Pipeline, Deterministic) {
  const auto c = testing::planted_corpus(200, 20, 20, 40, 4);
  const auto a = curate_pipeline(c.pairs, CurationConfig{});
  const auto b = curate_pipeline(c.pairs, CurationConfig{});
  EXPECT_EQ(a.kept, b.kept);
  EXPECT_EQ(a.report.to_json(), b.report.to_json());
}

TEST(Pipeline, FiltersCommute) {
  using namespace std::string_literals;
  auto c = testing::planted_corpus(100, 20, 20, 0, 8);
  c.pairs.push_back(pr("q", "", c.pairs.size()));
  c.pairs.push_back(pr("q", "I cannot \x01 ok"s, c.pairs.size()));
  c.pairs.push_back(pr("q", "Paris \x02", c.pairs.size()));
  const CurationConfig config;
  using Step = std::function<FilterResult(std::span<const PromptResponsePair>)>;
  std::vector<Step> steps = {
      [&](auto p) { return filter_refusals(p, config); },
      [](auto p) { return filter_malformed(p); },
      [&](auto p) { return filter_short(p, config); }};
  std::vector<int> order = {0, 1, 2};
  std::vector<std::uint64_t> reference;
  do {
    std::vector<PromptResponsePair> cur = c.pairs;
    for (int s : order) cur = steps[s](cur).kept;
    if (reference.empty()) reference = ids(cur);
    EXPECT_EQ(ids(cur), reference);
  } while (std::next_permutation(order.begin(), order.end()));
  EXPECT_EQ(reference.size(), 100u);
}

TEST(Pipeline, DropSources) {
  CurationConfig config;
  config.drop_sources = {"p3"};
  const std::vector<PromptResponsePair> pairs = {
      pr("a prompt", "a perfectly fine response", 0, "p3"),
      pr("b prompt", "another perfectly fine response", 1, "web")};
  const auto out = curate_pipeline(pairs, config);
  EXPECT_EQ(ids(out.kept), (std::vector<std::uint64_t>{1}));
  EXPECT_EQ(out.report.totals.removed_source, 1u);
  EXPECT_EQ(out.report.by_source.at("p3").removed_source, 1u);
}

TEST(Report, JsonShape) {
  const auto c = testing::planted_corpus(30, 7, 3, 6, 9);
  const auto out = curate_pipeline(c.pairs, CurationConfig{});
  const auto j = nlohmann::json::parse(out.report.to_json());
  EXPECT_EQ(j["input"], 46);
  EXPECT_EQ(j["kept"], 30);
  EXPECT_EQ(j["removed_refusal"], 7);
  EXPECT_EQ(j["examples"]["refusal"].size(), 5u);
  EXPECT_EQ(j["examples"]["short"].size(), 3u);
  EXPECT_EQ(j["examples"]["near_dup"].size(), 0u);
  EXPECT_EQ(j["by_source"]["alpha"]["input"].get<int>() + j["by_source"]["beta"]["input"].get<int>(), 46);
}

TEST(CurationConfig, Validation) {
  CurationConfig c;
  c.near_dup_jaccard = 1.5;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.minhash_permutations = 100;  // not a multiple of rows_per_band
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.shingle_words = 0;
  EXPECT_THROW(c.validate(), ValidationError);
}

SchemaTemplate story_schema() {
  SchemaTemplate s;
  s.text = "Write a [T] about [N] in the style of [P]";
  s.slots = {{"T", {"poem", "story"}}, {"N", {"cats", "rain", "trains"}}, {"P", {"Poe", "Woolf"}}};
  return s;
}

TEST(SchemaExpand, FullProduct) {
  const auto prompts = schema_expand(story_schema(), 0, 0);
  ASSERT_EQ(prompts.size(), 12u);
  EXPECT_EQ(prompts.front(), "Write a poem about cats in the style of Poe");
  EXPECT_EQ(prompts[1], "Write a poem about cats in the style of Woolf");
  EXPECT_EQ(prompts.back(), "Write a story about trains in the style of Woolf");
  EXPECT_EQ(std::set<std::string>(prompts.begin(), prompts.end()).size(), 12u);
  EXPECT_EQ(schema_expand(story_schema(), 12, 3), prompts);
}

TEST(SchemaExpand, NoSlots) {
  SchemaTemplate s;
  s.text = "Tell me a joke.";
  EXPECT_EQ(schema_expand(s, 0, 0), (std::vector<std::string>{"Tell me a joke."}));
}

TEST(SchemaExpand, RepeatedSlotFilledConsistently) {
  SchemaTemplate s;
  s.text = "[A] and [A] again";
  s.slots = {{"A", {"x", "y"}}};
  EXPECT_EQ(schema_expand(s, 0, 0), (std::vector<std::string>{"x and x again", "y and y again"}));
}

TEST(SchemaExpand, LimitIsSeededSubset) {
  const auto all = schema_expand(story_schema(), 0, 0);
  const auto a = schema_expand(story_schema(), 5, 42);
  EXPECT_EQ(a.size(), 5u);
  EXPECT_EQ(schema_expand(story_schema(), 5, 42), a);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end(), [&](const auto& x, const auto& y) {
    return std::find(all.begin(), all.end(), x) < std::find(all.begin(), all.end(), y);
  }));
  for (const auto& p : a) EXPECT_NE(std::find(all.begin(), all.end(), p), all.end());
  // Over many seeds every combination is drawn with frequency near 5/12.
  std::map<std::string, int> hits;
  for (std::uint64_t seed = 0; seed < 3000; ++seed) {
    for (const auto& p : schema_expand(story_schema(), 5, seed)) ++hits[p];
  }
  ASSERT_EQ(hits.size(), 12u);
  for (const auto& [p, n] : hits) EXPECT_NEAR(n / 3000.0, 5.0 / 12.0, 0.04) << p;
}

TEST(SchemaExpand, UnknownSlot) {
  SchemaTemplate s = story_schema();
  s.text += " with [MOOD]";
  try {
    schema_expand(s, 0, 0);
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("MOOD"), std::string::npos);
  }
  s = story_schema();
  s.slots["T"].clear();
  EXPECT_THROW(schema_expand(s, 0, 0), SchemaError);
}

TEST(SchemaExpand, SlotOrder) {
  EXPECT_EQ(template_slots("[B] [A] [B] [C"), (std::vector<std::string>{"B", "A"}));
}

TEST(Project2d, IdenticalTextsCoincide) {
  const std::vector<PromptResponsePair> pairs = {
      pr("same", "text here", 0), pr("same", "text here", 1), pr("other", "words entirely", 2)};
  const auto pts = project_2d(pairs);
  ASSERT_EQ(pts.size(), 3u);
  EXPECT_EQ(pts[0].x, pts[1].x);
  EXPECT_EQ(pts[0].y, pts[1].y);
  EXPECT_EQ(pts[2].id, 2u);
}

TEST(Project2d, SeparatesTwoClusters) {
  std::mt19937_64 rng(1);
  std::vector<PromptResponsePair> pairs;
  const std::string a = "the quick brown fox jumps over the lazy dog near the river bank";
  const std::string b = "quantum chromodynamics describes gluon exchange between colored quarks";
  for (std::size_t i = 0; i < 1000; ++i) {
    pairs.push_back(pr("p", (i % 2 ? a : b) + " " + testing::random_words(rng, 1), i));
  }
  const auto pts = project_2d(pairs);
  ASSERT_EQ(pts.size(), 1000u);
  double cx[2] = {0, 0}, cy[2] = {0, 0};
  for (const auto& p : pts) {
    cx[p.id % 2] += p.x / 500.0;
    cy[p.id % 2] += p.y / 500.0;
  }
  // Spread is the RMS distance of a point to its cluster centroid.
  double ss = 0;
  for (const auto& p : pts) {
    ss += std::pow(p.x - cx[p.id % 2], 2) + std::pow(p.y - cy[p.id % 2], 2);
  }
  const double spread = std::sqrt(ss / 1000.0);
  const double between = std::hypot(cx[0] - cx[1], cy[0] - cy[1]);
  EXPECT_GT(between, 10.0 * spread);
}

TEST(Project2d, DeterministicAndValidated) {
  const auto c = testing::planted_corpus(50, 0, 0, 0, 1);
  const auto a = project_2d(c.pairs, 3);
  const auto b = project_2d(c.pairs, 3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].x, b[i].x);
    EXPECT_EQ(a[i].y, b[i].y);
  }
  EXPECT_THROW(project_2d(std::vector<PromptResponsePair>{pr("a", "b", 0)}), ValidationError);
}

TEST(Project2d, CsvExport) {
  std::ostringstream out;
  const std::vector<MapPoint> pts = {{0, 1.5, -2.0}, {7, 0.25, 3.0}};
  write_projection_csv(out, pts);
  EXPECT_EQ(out.str(), "id,x,y\n0,1.5,-2\n7,0.25,3\n");
}

}  // namespace
}  // namespace deskllm
