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

#include "deskllm/evalharness.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string_view>
#include <utility>

#include "deskllm/errors.h"
#include "deskllm/log.h"
#include "deskllm/parallel.h"
#include "json.hpp"

namespace deskllm {
namespace {

using nlohmann::json;

std::int64_t to_tenths(double value) {
  return static_cast<std::int64_t>(std::llround(value * 10.0));
}

// round(num / den) with halves away from zero; den > 0.
std::int64_t div_round(std::int64_t num, std::int64_t den) {
  if (num >= 0) return (2 * num + den) / (2 * den);
  return -((-2 * num + den) / (2 * den));
}

std::string format_tenths(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f", round_tenths(value));
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

std::vector<double> log_softmax(std::span<const float> logits) {
  if (logits.empty()) throw DimensionError("log_softmax of an empty row");
  double max = logits[0];
  for (float v : logits) max = std::max(max, static_cast<double>(v));
  double sum = 0.0;
  for (float v : logits) sum += std::exp(static_cast<double>(v) - max);
  const double lse = max + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

PerplexityReport clipped_perplexity(const CausalLm& lm,
                                    const Tokenizer& tokenizer,
                                    std::span<const PromptResponsePair> pairs,
                                    double clip) {
  if (!(clip >= 1.0)) throw ValidationError("perplexity clip must be >= 1");
  PerplexityReport report;
  report.clip = clip;
  double total = 0.0;
  for (const auto& pair : pairs) {
    std::vector<TokenId> tokens = {kBosId};
    const auto prompt = tokenizer.encode(pair.prompt);
    tokens.insert(tokens.end(), prompt.begin(), prompt.end());
    const std::size_t prefix = tokens.size();
    const auto response = tokenizer.encode(pair.response);
    if (response.empty()) {
      report.skipped.push_back({pair.id, "response encodes to no tokens"});
      log_warn("perplexity: skipping pair " + std::to_string(pair.id) +
               ": empty response");
      continue;
    }
    tokens.insert(tokens.end(), response.begin(), response.end());
    if (tokens.size() > lm.max_seq()) {
      report.skipped.push_back(
          {pair.id, "needs " + std::to_string(tokens.size()) +
                        " positions, context window is " +
                        std::to_string(lm.max_seq())});
      log_warn("perplexity: skipping pair " + std::to_string(pair.id) +
               ": " + report.skipped.back().reason);
      continue;
    }
    const std::vector<TokenId> input(tokens.begin(), tokens.end() - 1);
    const Tensor logits = lm.sequence_logits(input);
    double nll = 0.0;
    for (std::size_t t = prefix; t < tokens.size(); ++t) {
      const auto lp = log_softmax(logits.row(t - 1));
      nll -= lp[static_cast<std::size_t>(tokens[t])];
    }
    PplRecord rec;
    rec.pair_id = pair.id;
    rec.tokens = response.size();
    rec.nll = nll / static_cast<double>(response.size());
    rec.perplexity = std::min(std::exp(rec.nll), clip);
    total += rec.perplexity;
    report.records.push_back(rec);
  }
  if (report.records.empty()) {
    throw EvaluationError("perplexity: no pair could be scored");
  }
  report.mean_perplexity = total / static_cast<double>(report.records.size());
  return report;
}

McTask::McTask(std::string name, std::vector<McItem> items)
    : name_(std::move(name)), items_(std::move(items)) {
  if (items_.empty()) throw ValidationError("task " + name_ + " has no items");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& item = items_[i];
    const std::string where = "task " + name_ + " item " + std::to_string(i);
    if (item.choices.size() < 2) {
      throw ValidationError(where + ": needs at least 2 choices, has " +
                            std::to_string(item.choices.size()));
    }
    for (std::size_t c = 0; c < item.choices.size(); ++c) {
      if (item.choices[c].empty()) {
        throw ValidationError(where + ": choice " + std::to_string(c) + " is empty");
      }
    }
    if (item.answer_index >= item.choices.size()) {
      throw ValidationError(where + ": answer_index " +
                            std::to_string(item.answer_index) + " out of range");
    }
  }
}

McTask parse_mc_task(std::istream& in, std::string name) {
  std::vector<McItem> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      McItem item;
      item.context = j.at("context").get<std::string>();
      item.choices = j.at("choices").get<std::vector<std::string>>();
      const auto& answer = j.at("answer_index");
      if (!answer.is_number_unsigned()) {
        throw LineParseError(line_no, "answer_index must be a non-negative integer");
      }
      item.answer_index = answer.get<std::size_t>();
      items.push_back(std::move(item));
    } catch (const json::exception& e) {
      throw LineParseError(line_no, e.what());
    }
  }
  return McTask(std::move(name), std::move(items));
}

McTask load_mc_task(const std::string& path, std::string name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return parse_mc_task(in, std::move(name));
}

McScore mc_score(const CausalLm& lm, const Tokenizer& tokenizer,
                 const McItem& item) {
  std::vector<TokenId> context = {kBosId};
  const auto ctx = tokenizer.encode(item.context);
  context.insert(context.end(), ctx.begin(), ctx.end());
  McScore result;
  result.scores.reserve(item.choices.size());
  for (const auto& choice : item.choices) {
    const auto cont = tokenizer.encode(choice);
    if (cont.empty()) throw ValidationError("choice encodes to no tokens");
    std::vector<TokenId> tokens = context;
    tokens.insert(tokens.end(), cont.begin(), cont.end());
    if (tokens.size() > lm.max_seq()) {
      throw ContextOverflowError("item needs " + std::to_string(tokens.size()) +
                                 " positions, context window is " +
                                 std::to_string(lm.max_seq()));
    }
    const std::vector<TokenId> input(tokens.begin(), tokens.end() - 1);
    const Tensor logits = lm.sequence_logits(input);
    double sum = 0.0;
    for (std::size_t t = context.size(); t < tokens.size(); ++t) {
      const auto lp = log_softmax(logits.row(t - 1));
      sum += lp[static_cast<std::size_t>(tokens[t])];
    }
    result.scores.push_back(sum / static_cast<double>(cont.size()));
  }
  for (std::size_t c = 1; c < result.scores.size(); ++c) {
    if (result.scores[c] > result.scores[result.chosen]) result.chosen = c;
  }
  return result;
}

EvalResult mc_accuracy(const CausalLm& lm, const Tokenizer& tokenizer,
                       const McTask& task, std::string model_name) {
  const auto& items = task.items();
  // 0 = skipped, 1 = wrong, 2 = correct; filled independently per item.
  std::vector<int> outcome(items.size(), 0);
  parallel_for(items.size(), 1 << 15, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        const McScore s = mc_score(lm, tokenizer, items[i]);
        outcome[i] = s.chosen == items[i].answer_index ? 2 : 1;
      } catch (const ContextOverflowError&) {
        outcome[i] = 0;
      }
    }
  });
  EvalResult r;
  r.model = std::move(model_name);
  r.task = task.name();
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (outcome[i] == 0) {
      ++r.skipped;
      log_warn("mc: task " + task.name() + " item " + std::to_string(i) +
               " skipped: exceeds the context window");
    } else {
      ++r.scored;
      correct += outcome[i] == 2;
    }
  }
  if (r.scored == 0) {
    throw EvaluationError("mc: every item of task " + task.name() + " was skipped");
  }
  r.accuracy = static_cast<double>(div_round(1000 * correct,
                                             static_cast<std::int64_t>(r.scored))) /
               10.0;
  return r;
}

std::vector<EvalResult> read_eval_results(std::istream& in) {
  std::vector<EvalResult> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      EvalResult r;
      r.model = j.at("model").get<std::string>();
      r.task = j.at("task").get<std::string>();
      r.accuracy = j.at("accuracy").get<double>();
      r.scored = j.value("scored", std::size_t{0});
      r.skipped = j.value("skipped", std::size_t{0});
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw LineParseError(line_no, e.what());
    }
  }
  return out;
}

std::vector<EvalResult> load_eval_results(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return read_eval_results(in);
}

void write_eval_results(std::ostream& out, std::span<const EvalResult> results) {
  for (const auto& r : results) {
    nlohmann::ordered_json j = {{"model", r.model},
                                {"task", r.task},
                                {"accuracy", r.accuracy},
                                {"scored", r.scored},
                                {"skipped", r.skipped},
                                {"scoring", "zero-shot, length-normalized log-likelihood"}};
    out << j.dump() << '\n';
  }
}

double round_tenths(double value) {
  return static_cast<double>(div_round(
             static_cast<std::int64_t>(std::llround(value * 1e6)), 100000)) /
         10.0;
}

BenchmarkTable report_table(std::span<const EvalResult> results,
                            const std::optional<std::string>& reference_model) {
  BenchmarkTable table;
  std::vector<std::string> models;
  std::map<std::pair<std::string, std::string>, double> cells;
  for (const auto& r : results) {
    if (std::find(models.begin(), models.end(), r.model) == models.end()) {
      models.push_back(r.model);
    }
    if (std::find(table.tasks.begin(), table.tasks.end(), r.task) == table.tasks.end()) {
      table.tasks.push_back(r.task);
    }
    if (!cells.emplace(std::make_pair(r.model, r.task), r.accuracy).second) {
      throw ValidationError("duplicate score for model " + r.model + ", task " + r.task);
    }
  }
  if (models.empty()) throw ValidationError("no results to tabulate");
  if (reference_model &&
      std::find(models.begin(), models.end(), *reference_model) == models.end()) {
    throw ValidationError("reference model " + *reference_model + " has no results");
  }
  table.reference = reference_model;

  std::optional<std::int64_t> reference_avg;
  std::vector<std::int64_t> avg_tenths;
  for (const auto& model : models) {
    BenchmarkRow row;
    row.model = model;
    std::int64_t sum = 0;
    for (const auto& task : table.tasks) {
      auto it = cells.find({model, task});
      if (it == cells.end()) {
        throw ValidationError("model " + model + " has no score for task " + task);
      }
      row.scores.push_back(it->second);
      sum += to_tenths(it->second);
    }
    const std::int64_t avg = div_round(sum, static_cast<std::int64_t>(table.tasks.size()));
    row.average = static_cast<double>(avg) / 10.0;
    if (reference_model && model == *reference_model) reference_avg = avg;
    table.rows.push_back(std::move(row));
  }
  if (reference_avg) {
    if (*reference_avg == 0) throw ValidationError("reference average is zero");
    for (auto& row : table.rows) {
      row.relative = round_tenths(100.0 * row.average / (static_cast<double>(*reference_avg) / 10.0));
    }
  }
  return table;
}

// Display width in UTF-8 characters.
static std::size_t text_width(std::string_view s) {
  std::size_t n = 0;
  for (char ch : s) n += (static_cast<unsigned char>(ch) & 0xC0) != 0x80;
  return n;
}

std::string BenchmarkTable::render_text() const {
  const std::size_t n_cols = tasks.size() + 1;
  auto is_reference = [&](const BenchmarkRow& row) {
    return reference && row.model == *reference;
  };
  // Column maxima in tenths, over non-reference rows.
  std::vector<std::int64_t> best(n_cols, INT64_MIN);
  for (const auto& row : rows) {
    if (is_reference(row)) continue;
    for (std::size_t c = 0; c < tasks.size(); ++c) {
      best[c] = std::max(best[c], to_tenths(row.scores[c]));
    }
    best[tasks.size()] = std::max(best[tasks.size()], to_tenths(row.average));
  }

  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header = {"Model"};
  header.insert(header.end(), tasks.begin(), tasks.end());
  header.push_back("Avg.");
  if (reference) header.push_back("Rel. %");
  grid.push_back(header);
  for (const auto& row : rows) {
    std::vector<std::string> cells = {row.model};
    for (std::size_t c = 0; c < n_cols; ++c) {
      const double v = c < tasks.size() ? row.scores[c] : row.average;
      std::string s = format_tenths(v);
      if (!is_reference(row) && to_tenths(v) == best[c]) s = "**" + s + "**";
      cells.push_back(std::move(s));
    }
    if (reference) cells.push_back(format_tenths(*row.relative));
    grid.push_back(std::move(cells));
  }

  std::vector<std::size_t> width(grid[0].size(), 0);
  for (const auto& line : grid) {
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], text_width(line[c]));
  }
  std::string out;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    std::string line;
    for (std::size_t c = 0; c < grid[r].size(); ++c) {
      const std::string& cell = grid[r][c];
      const std::string pad(width[c] - text_width(cell), ' ');
      if (c == 0) {
        line += cell + pad;
      } else {
        line += "  " + pad + cell;
      }
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c ? 2 : 0);
      out += std::string(total, '-') + '\n';
    }
  }
  return out;
}

std::string BenchmarkTable::render_csv() const {
  std::string out = "model";
  for (const auto& t : tasks) out += "," + csv_field(t);
  out += ",average";
  if (reference) out += ",relative";
  out += '\n';
  for (const auto& row : rows) {
    out += csv_field(row.model);
    for (double v : row.scores) out += "," + format_tenths(v);
    out += "," + format_tenths(row.average);
    if (reference) out += "," + format_tenths(*row.relative);
    out += '\n';
  }
  return out;
}

}  // namespace deskllm
