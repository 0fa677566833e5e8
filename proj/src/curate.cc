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
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "deskllm/errors.h"
#include "deskllm/tokenizer.h"
#include "hash.h"
#include "json.hpp"

namespace deskllm {
namespace {

using internal::fnv1a64;
using internal::splitmix64;

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' ||
         c == '\f';
}

char ascii_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = ascii_lower(c);
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_words(std::string_view s) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    const std::size_t start = i;
    while (i < s.size() && !is_space(s[i])) ++i;
    if (i > start) words.push_back(s.substr(start, i - start));
  }
  return words;
}

// Number of UTF-8 encoded characters (continuation bytes not counted).
std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (char c : s) {
    if ((static_cast<unsigned char>(c) & 0xC0) != 0x80) ++n;
  }
  return n;
}

// ---- flat JSON record parser --------------------------------------------

class RecordParser {
 public:
  RecordParser(std::string_view line, std::size_t line_no)
      : s_(line), line_(line_no) {}

  std::map<std::string, std::string> parse() {
    std::map<std::string, std::string> fields;
    skip_ws();
    expect('{');
    skip_ws();
    if (peek() == '}') {
      ++pos_;
    } else {
      for (;;) {
        skip_ws();
        std::string key = parse_string();
        skip_ws();
        expect(':');
        skip_ws();
        std::string value;
        bool is_string = false;
        parse_value(value, is_string);
        if (fields.count(key)) fail("duplicate field \"" + key + "\"");
        if (is_string) {
          fields.emplace(std::move(key), std::move(value));
        } else {
          non_string_.insert(key);
        }
        skip_ws();
        if (peek() == ',') {
          ++pos_;
          continue;
        }
        expect('}');
        break;
      }
    }
    skip_ws();
    if (pos_ != s_.size()) fail("trailing characters after object");
    return fields;
  }

  bool was_non_string(const std::string& key) const {
    return non_string_.count(key) > 0;
  }

  [[noreturn]] void fail(const std::string& why) const {
    throw LineParseError(line_, why);
  }

 private:
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }

  void expect(char c) {
    if (peek() != c) {
      fail(std::string("expected '") + c + "' at column " +
           std::to_string(pos_ + 1));
    }
    ++pos_;
  }

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' ||
                                s_[pos_] == '\r' || s_[pos_] == '\n')) {
      ++pos_;
    }
  }

  void parse_value(std::string& out, bool& is_string) {
    const char c = peek();
    if (c == '"') {
      out = parse_string();
      is_string = true;
      return;
    }
    if (c == '{' || c == '[') fail("nested values are not allowed");
    // Scalar literal: number, true, false, null.
    const std::size_t start = pos_;
    while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != '}' &&
           !is_space(s_[pos_])) {
      ++pos_;
    }
    const std::string_view lit = s_.substr(start, pos_ - start);
    if (lit == "true" || lit == "false" || lit == "null") return;
    try {
      auto j = nlohmann::json::parse(lit);
      if (j.is_number()) return;
    } catch (const nlohmann::json::exception&) {
    }
    fail("invalid value at column " + std::to_string(start + 1));
  }

  unsigned hex4() {
    if (pos_ + 4 > s_.size()) fail("truncated \\u escape");
    unsigned v = 0;
    for (int i = 0; i < 4; ++i) {
      const char c = s_[pos_++];
      v <<= 4;
      if (c >= '0' && c <= '9') v |= static_cast<unsigned>(c - '0');
      else if (c >= 'a' && c <= 'f') v |= static_cast<unsigned>(c - 'a' + 10);
      else if (c >= 'A' && c <= 'F') v |= static_cast<unsigned>(c - 'A' + 10);
      else fail("bad hex digit in \\u escape");
    }
    return v;
  }

  static void append_utf8(std::string& out, unsigned cp) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }

  std::string parse_string() {
    expect('"');
    std::string out;
    for (;;) {
      if (pos_ >= s_.size()) fail("unterminated string");
      const char c = s_[pos_++];
      if (c == '"') break;
      if (c != '\\') {
        // Raw control characters are tolerated here and judged later by
        // the malformed filter.
        out.push_back(c);
        continue;
      }
      if (pos_ >= s_.size()) fail("unterminated escape");
      const char e = s_[pos_++];
      switch (e) {
        case '"': out.push_back('"'); break;
        case '\\': out.push_back('\\'); break;
        case '/': out.push_back('/'); break;
        case 'b': out.push_back('\b'); break;
        case 'f': out.push_back('\f'); break;
        case 'n': out.push_back('\n'); break;
        case 'r': out.push_back('\r'); break;
        case 't': out.push_back('\t'); break;
        case 'u': {
          unsigned cp = hex4();
          if (cp >= 0xD800 && cp <= 0xDBFF && pos_ + 6 <= s_.size() &&
              s_[pos_] == '\\' && s_[pos_ + 1] == 'u') {
            const std::size_t save = pos_;
            pos_ += 2;
            const unsigned lo = hex4();
            if (lo >= 0xDC00 && lo <= 0xDFFF) {
              cp = 0x10000 + ((cp - 0xD800) << 10) + (lo - 0xDC00);
            } else {
              pos_ = save;
            }
          }
          // A lone surrogate is kept in its 3-byte form (invalid UTF-8).
          append_utf8(out, cp);
          break;
        }
        default:
          fail(std::string("bad escape \\") + e);
      }
    }
    return out;
  }

  std::string_view s_;
  std::size_t line_;
  std::size_t pos_ = 0;
  std::set<std::string> non_string_;
};

void append_json_string(std::string& out, std::string_view s) {
  out.push_back('"');
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      case '\b': out += "\\b"; break;
      case '\f': out += "\\f"; break;
      default:
        if (c < 0x20) {
          static const char* hex = "0123456789abcdef";
          out += "\\u00";
          out.push_back(hex[c >> 4]);
          out.push_back(hex[c & 0xF]);
        } else {
          out.push_back(ch);
        }
    }
  }
  out.push_back('"');
}

bool has_bad_control(std::string_view s) {
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if ((c < 0x20 && c != '\t' && c != '\n') || c == 0x7F) return true;
  }
  return false;
}

// ---- near-duplicate machinery --------------------------------------------

struct DisjointSet {
  explicit DisjointSet(std::size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  // The root is always the smaller index, i.e. the lowest input position.
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[b] = a;
  }
  std::vector<std::size_t> parent;
};

std::vector<std::uint64_t> minhash_signature(
    std::span<const std::uint64_t> shingles,
    std::span<const std::uint64_t> salts) {
  std::vector<std::uint64_t> sig(salts.size(),
                                 std::numeric_limits<std::uint64_t>::max());
  for (std::uint64_t h : shingles) {
    for (std::size_t p = 0; p < salts.size(); ++p) {
      sig[p] = std::min(sig[p], splitmix64(h ^ salts[p]));
    }
  }
  return sig;
}

void add_to_report(CurationReport& report, const std::string& stage,
                   std::size_t CurationReport::Counts::*field,
                   const std::vector<PromptResponsePair>& removed) {
  report.totals.*field += removed.size();
  for (const auto& p : removed) report.by_source[p.source].*field += 1;
  auto& ex = report.examples[stage];
  for (const auto& p : removed) {
    if (ex.size() >= 5) break;
    ex.push_back(p);
  }
}

}  // namespace

void CurationConfig::validate() const {
  if (min_chars == 0) throw ValidationError("min_chars must be positive");
  if (min_words == 0) throw ValidationError("min_words must be positive");
  if (!(near_dup_jaccard > 0.0 && near_dup_jaccard <= 1.0)) {
    throw ValidationError("near_dup_jaccard must be in (0, 1]");
  }
  if (shingle_words == 0) throw ValidationError("shingle_words must be positive");
  if (rows_per_band == 0 || minhash_permutations == 0 ||
      minhash_permutations % rows_per_band != 0) {
    throw ValidationError(
        "minhash_permutations must be a positive multiple of rows_per_band");
  }
}

std::vector<PromptResponsePair> ingest_stream(std::istream& in) {
  std::vector<PromptResponsePair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    RecordParser parser(line, line_no);
    auto fields = parser.parse();
    PromptResponsePair pair;
    for (const char* key : {"prompt", "response"}) {
      auto it = fields.find(key);
      if (it == fields.end()) {
        parser.fail(std::string(parser.was_non_string(key)
                                    ? "field must be a string: "
                                    : "missing field: ") +
                    key);
      }
    }
    if (parser.was_non_string("source")) parser.fail("field must be a string: source");
    pair.prompt = std::move(fields["prompt"]);
    pair.response = std::move(fields["response"]);
    if (auto it = fields.find("source"); it != fields.end()) {
      pair.source = std::move(it->second);
    }
    pair.id = pairs.size();
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::vector<PromptResponsePair> ingest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return ingest_stream(in);
}

void write_pairs(std::ostream& out, std::span<const PromptResponsePair> pairs) {
  std::string line;
  for (const auto& p : pairs) {
    line.clear();
    line += "{\"prompt\":";
    append_json_string(line, p.prompt);
    line += ",\"response\":";
    append_json_string(line, p.response);
    line += ",\"source\":";
    append_json_string(line, p.source);
    line += "}\n";
    out << line;
  }
}

FilterResult filter_refusals(std::span<const PromptResponsePair> pairs,
                             const CurationConfig& config) {
  std::vector<std::string> patterns;
  for (const auto& p : config.refusal_patterns) {
    if (!p.empty()) patterns.push_back(lowercase(p));
  }
  FilterResult r;
  for (const auto& pair : pairs) {
    const std::string text = lowercase(pair.response);
    const bool refused = std::any_of(patterns.begin(), patterns.end(), [&](const std::string& pat) {
      return text.find(pat) != std::string::npos;
    });
    (refused ? r.removed : r.kept).push_back(pair);
  }
  return r;
}

FilterResult filter_malformed(std::span<const PromptResponsePair> pairs) {
  FilterResult r;
  for (const auto& pair : pairs) {
    const bool bad = trim(pair.response).empty() || trim(pair.prompt).empty() ||
                     !is_valid_utf8(pair.response) || !is_valid_utf8(pair.prompt) ||
                     has_bad_control(pair.response) || has_bad_control(pair.prompt);
    (bad ? r.removed : r.kept).push_back(pair);
  }
  return r;
}

FilterResult filter_short(std::span<const PromptResponsePair> pairs,
                          const CurationConfig& config) {
  FilterResult r;
  for (const auto& pair : pairs) {
    const std::string_view text = trim(pair.response);
    const bool too_short = split_words(text).size() < config.min_words ||
                           utf8_length(text) < config.min_chars;
    (too_short ? r.removed : r.kept).push_back(pair);
  }
  return r;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(ascii_lower(c));
  }
  return out;
}

std::string dedup_key(const PromptResponsePair& pair) {
  return normalize_text(pair.prompt + "\n" + pair.response);
}

std::vector<std::uint64_t> shingle_set(std::string_view normalized,
                                       std::size_t shingle_words) {
  const auto words = split_words(normalized);
  std::vector<std::uint64_t> out;
  if (words.empty()) return out;
  const std::size_t width = std::min(shingle_words, words.size());
  std::string shingle;
  for (std::size_t i = 0; i + width <= words.size(); ++i) {
    shingle.clear();
    for (std::size_t k = 0; k < width; ++k) {
      if (k) shingle.push_back(' ');
      shingle += words[i + k];
    }
    out.push_back(fnv1a64(shingle));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double jaccard(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0, i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

DedupResult dedup(std::span<const PromptResponsePair> pairs,
                  const CurationConfig& config) {
  config.validate();
  DedupResult out;

  // Stage 1: exact duplicates after normalization, lowest id wins.
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pairs[a].id < pairs[b].id;
  });
  std::vector<bool> exact_dup(pairs.size(), false);
  std::vector<std::string> keys(pairs.size());
  std::unordered_set<std::string> seen;
  for (std::size_t idx : order) {
    keys[idx] = dedup_key(pairs[idx]);
    if (!seen.insert(keys[idx]).second) exact_dup[idx] = true;
  }

  // Stage 2: near duplicates among survivors, visited in id order so the
  // disjoint-set root is the lowest id of each cluster.
  std::vector<std::size_t> survivors;
  for (std::size_t idx : order) {
    if (!exact_dup[idx]) survivors.push_back(idx);
  }
  std::vector<std::uint64_t> salts(config.minhash_permutations);
  for (std::size_t p = 0; p < salts.size(); ++p) {
    salts[p] = splitmix64(config.seed * 0x100000001B3ull + p);
  }
  std::vector<std::vector<std::uint64_t>> shingles(survivors.size());
  std::vector<std::vector<std::uint64_t>> sigs(survivors.size());
  for (std::size_t s = 0; s < survivors.size(); ++s) {
    shingles[s] = shingle_set(keys[survivors[s]], config.shingle_words);
    sigs[s] = minhash_signature(shingles[s], salts);
  }

  const std::size_t rows = config.rows_per_band;
  const std::size_t bands = config.minhash_permutations / rows;
  std::set<std::pair<std::size_t, std::size_t>> candidates;
  for (std::size_t band = 0; band < bands; ++band) {
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;
    for (std::size_t s = 0; s < survivors.size(); ++s) {
      if (shingles[s].empty()) continue;
      std::uint64_t h = splitmix64(band);
      for (std::size_t r = 0; r < rows; ++r) {
        h = splitmix64(h ^ sigs[s][band * rows + r]);
      }
      buckets[h].push_back(s);
    }
    for (const auto& [key, members] : buckets) {
      for (std::size_t i = 0; i < members.size(); ++i) {
        for (std::size_t j = i + 1; j < members.size(); ++j) {
          candidates.emplace(members[i], members[j]);
        }
      }
    }
  }

  DisjointSet clusters(survivors.size());
  for (const auto& [a, b] : candidates) {
    if (jaccard(shingles[a], shingles[b]) >= config.near_dup_jaccard) {
      clusters.unite(a, b);
    }
  }
  std::vector<bool> near_dup(pairs.size(), false);
  for (std::size_t s = 0; s < survivors.size(); ++s) {
    if (clusters.find(s) != s) near_dup[survivors[s]] = true;
  }

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (exact_dup[i]) {
      out.removed_exact.push_back(pairs[i]);
    } else if (near_dup[i]) {
      out.removed_near.push_back(pairs[i]);
    } else {
      out.kept.push_back(pairs[i]);
    }
  }
  return out;
}

std::string CurationReport::to_json() const {
  auto counts_json = [](const Counts& c) {
    return nlohmann::ordered_json{
        {"input", c.input},
        {"removed_source", c.removed_source},
        {"removed_refusal", c.removed_refusal},
        {"removed_malformed", c.removed_malformed},
        {"removed_short", c.removed_short},
        {"removed_exact_dup", c.removed_exact_dup},
        {"removed_near_dup", c.removed_near_dup},
        {"kept", c.kept},
    };
  };
  nlohmann::ordered_json j = counts_json(totals);
  nlohmann::ordered_json sources = nlohmann::ordered_json::object();
  for (const auto& [name, c] : by_source) sources[name] = counts_json(c);
  j["by_source"] = sources;
  nlohmann::ordered_json ex = nlohmann::ordered_json::object();
  for (const auto& [stage, list] : examples) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& p : list) {
      arr.push_back({{"id", p.id},
                     {"source", p.source},
                     {"prompt", p.prompt},
                     {"response", p.response}});
    }
    ex[stage] = arr;
  }
  j["examples"] = ex;
  return j.dump(2, ' ', false, nlohmann::ordered_json::error_handler_t::replace) + "\n";
}

CurationOutput curate_pipeline(std::span<const PromptResponsePair> pairs,
                               const CurationConfig& config) {
  config.validate();
  CurationOutput out;
  CurationReport& report = out.report;
  report.totals.input = pairs.size();
  for (const auto& p : pairs) report.by_source[p.source].input += 1;
  for (const char* stage : {"source", "refusal", "malformed", "short", "exact_dup", "near_dup"}) {
    report.examples[stage];
  }

  std::vector<PromptResponsePair> current;
  std::vector<PromptResponsePair> dropped;
  for (const auto& p : pairs) {
    const bool drop = std::find(config.drop_sources.begin(), config.drop_sources.end(),
                                p.source) != config.drop_sources.end();
    (drop ? dropped : current).push_back(p);
  }
  add_to_report(report, "source", &CurationReport::Counts::removed_source, dropped);

  FilterResult step = filter_refusals(current, config);
  add_to_report(report, "refusal", &CurationReport::Counts::removed_refusal, step.removed);
  step = filter_malformed(step.kept);
  add_to_report(report, "malformed", &CurationReport::Counts::removed_malformed, step.removed);
  step = filter_short(step.kept, config);
  add_to_report(report, "short", &CurationReport::Counts::removed_short, step.removed);
  DedupResult d = dedup(step.kept, config);
  add_to_report(report, "exact_dup", &CurationReport::Counts::removed_exact_dup, d.removed_exact);
  add_to_report(report, "near_dup", &CurationReport::Counts::removed_near_dup, d.removed_near);

  out.kept = std::move(d.kept);
  report.totals.kept = out.kept.size();
  for (const auto& p : out.kept) report.by_source[p.source].kept += 1;
  return out;
}

std::vector<std::string> template_slots(std::string_view text) {
  std::vector<std::string> names;
  std::size_t pos = 0;
  while ((pos = text.find('[', pos)) != std::string_view::npos) {
    const std::size_t close = text.find(']', pos + 1);
    if (close == std::string_view::npos) break;
    std::string name(text.substr(pos + 1, close - pos - 1));
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      names.push_back(std::move(name));
    }
    pos = close + 1;
  }
  return names;
}

std::vector<std::string> schema_expand(const SchemaTemplate& schema,
                                       std::size_t limit, std::uint64_t seed) {
  const auto names = template_slots(schema.text);
  std::vector<const std::vector<std::string>*> values;
  std::uint64_t product = 1;
  for (const auto& name : names) {
    auto it = schema.slots.find(name);
    if (it == schema.slots.end()) {
      throw SchemaError("template slot [" + name + "] has no value list");
    }
    if (it->second.empty()) {
      throw SchemaError("template slot [" + name + "] has an empty value list");
    }
    values.push_back(&it->second);
    if (product > std::numeric_limits<std::uint64_t>::max() / it->second.size()) {
      throw SchemaError("slot value product overflows 64 bits");
    }
    product *= it->second.size();
  }

  std::vector<std::uint64_t> picks;
  if (limit == 0 || product <= limit) {
    picks.resize(product);
    std::iota(picks.begin(), picks.end(), std::uint64_t{0});
  } else {
    // Floyd's algorithm: `limit` distinct indices in [0, product).
    std::mt19937_64 rng(seed);
    std::set<std::uint64_t> chosen;
    for (std::uint64_t j = product - limit; j < product; ++j) {
      const std::uint64_t t = std::uniform_int_distribution<std::uint64_t>(0, j)(rng);
      if (!chosen.insert(t).second) chosen.insert(j);
    }
    picks.assign(chosen.begin(), chosen.end());
  }

  std::vector<std::string> prompts;
  prompts.reserve(picks.size());
  std::vector<std::size_t> digits(names.size());
  for (std::uint64_t index : picks) {
    for (std::size_t k = names.size(); k-- > 0;) {
      digits[k] = static_cast<std::size_t>(index % values[k]->size());
      index /= values[k]->size();
    }
    std::string out;
    std::string_view text = schema.text;
    std::size_t pos = 0;
    for (;;) {
      const std::size_t open = text.find('[', pos);
      const std::size_t close =
          open == std::string_view::npos ? open : text.find(']', open + 1);
      if (close == std::string_view::npos) {
        out += text.substr(pos);
        break;
      }
      out += text.substr(pos, open - pos);
      const std::string name(text.substr(open + 1, close - open - 1));
      const auto slot = static_cast<std::size_t>(
          std::find(names.begin(), names.end(), name) - names.begin());
      out += (*values[slot])[digits[slot]];
      pos = close + 1;
    }
    prompts.push_back(std::move(out));
  }
  return prompts;
}

std::vector<MapPoint> project_2d(std::span<const PromptResponsePair> pairs,
                                 std::uint64_t seed) {
  if (pairs.size() < 2) {
    throw ValidationError("project_2d needs at least 2 pairs, got " +
                          std::to_string(pairs.size()));
  }
  const std::size_t n = pairs.size();
  constexpr std::size_t dims = kProjectionDims;
  std::vector<double> features(n * dims, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string text = dedup_key(pairs[i]);
    for (auto word : split_words(text)) {
      const std::uint64_t h = splitmix64(fnv1a64(word) ^ seed);
      features[i * dims + h % dims] += 1.0;
    }
  }
  std::vector<double> mean(dims, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < dims; ++k) mean[k] += features[i * dims + k];
  }
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < dims; ++k) features[i * dims + k] -= mean[k];
  }

  auto normalize = [](std::vector<double>& v) {
    double norm = 0.0;
    for (double e : v) norm += e * e;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& e : v) e /= norm;
    }
  };
  auto project_out = [](std::vector<double>& v, const std::vector<double>& u) {
    double dot = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) dot += v[k] * u[k];
    for (std::size_t k = 0; k < v.size(); ++k) v[k] -= dot * u[k];
  };
  // v <- X^T X v without forming the covariance.
  auto cov_apply = [&](const std::vector<double>& v) {
    std::vector<double> scores(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < dims; ++k) s += features[i * dims + k] * v[k];
      scores[i] = s;
    }
    std::vector<double> out(dims, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < dims; ++k) out[k] += features[i * dims + k] * scores[i];
    }
    return out;
  };
  auto fix_sign = [](std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < v.size(); ++k) {
      if (std::fabs(v[k]) > std::fabs(v[best])) best = k;
    }
    if (v[best] < 0.0) {
      for (double& e : v) e = -e;
    }
  };

  std::vector<std::vector<double>> components;
  for (int c = 0; c < 2; ++c) {
    std::vector<double> v(dims);
    for (std::size_t k = 0; k < dims; ++k) {
      v[k] = static_cast<double>(splitmix64(0xC0FFEEull + 7919ull * c + k) >> 11) /
                 9007199254740992.0 - 0.5;
    }
    for (const auto& u : components) project_out(v, u);
    normalize(v);
    for (int it = 0; it < 100; ++it) {
      v = cov_apply(v);
      for (const auto& u : components) project_out(v, u);
      normalize(v);
    }
    fix_sign(v);
    components.push_back(std::move(v));
  }

  std::vector<MapPoint> points(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = 0.0, y = 0.0;
    for (std::size_t k = 0; k < dims; ++k) {
      x += features[i * dims + k] * components[0][k];
      y += features[i * dims + k] * components[1][k];
    }
    points[i] = {pairs[i].id, x, y};
  }
  return points;
}

void write_projection_csv(std::ostream& out, std::span<const MapPoint> points) {
  out << "id,x,y\n";
  char buf[96];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof(buf), "%llu,%.9g,%.9g\n",
                  static_cast<unsigned long long>(p.id), p.x, p.y);
    out << buf;
  }
}

}  // namespace deskllm
