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

#ifndef DESKLLM_EVALHARNESS_H_
#define DESKLLM_EVALHARNESS_H_

#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "deskllm/model.h"
#include "deskllm/prompt_pair.h"
#include "deskllm/tokenizer.h"

namespace deskllm {

// Natural-log probability of every token under one row of logits.
std::vector<double> log_softmax(std::span<const float> logits);

struct PplRecord {
  std::uint64_t pair_id = 0;
  std::size_t tokens = 0;
  double nll = 0.0;
  double perplexity = 1.0;  // min(exp(nll), clip)
};

struct SkippedRecord {
  std::uint64_t id = 0;
  std::string reason;
};

struct PerplexityReport {
  std::vector<PplRecord> records;
  std::vector<SkippedRecord> skipped;
  double clip = 100.0;
  // Mean of the clipped per-record perplexities.
  double mean_perplexity = 0.0;
};

// Conditions on BOS + prompt and scores the response tokens. Pairs that do
// not fit the context window, or whose response encodes to nothing, are
// listed in `skipped`. Throws EvaluationError when nothing can be scored.
PerplexityReport clipped_perplexity(const CausalLm& lm,
                                    const Tokenizer& tokenizer,
                                    std::span<const PromptResponsePair> pairs,
                                    double clip = 100.0);

struct McItem {
  std::string context;
  std::vector<std::string> choices;
  std::size_t answer_index = 0;
};

class McTask {
 public:
  McTask(std::string name, std::vector<McItem> items);

  const std::string& name() const { return name_; }
  const std::vector<McItem>& items() const { return items_; }

 private:
  std::string name_;
  std::vector<McItem> items_;
};

// One JSON object per line: {"context", "choices", "answer_index"}.
McTask load_mc_task(const std::string& path, std::string name);
McTask parse_mc_task(std::istream& in, std::string name);

struct McScore {
  std::size_t chosen = 0;
  // Mean log-probability of each continuation, in nats.
  std::vector<double> scores;
};

// Throws ContextOverflowError when BOS + context + a choice exceeds the
// model's window.
McScore mc_score(const CausalLm& lm, const Tokenizer& tokenizer,
                 const McItem& item);

struct EvalResult {
  std::string model;
  std::string task;
  double accuracy = 0.0;  // percent, one decimal
  std::size_t scored = 0;
  std::size_t skipped = 0;
};

EvalResult mc_accuracy(const CausalLm& lm, const Tokenizer& tokenizer,
                       const McTask& task, std::string model_name);

// Results files hold one JSON object per line.
std::vector<EvalResult> read_eval_results(std::istream& in);
std::vector<EvalResult> load_eval_results(const std::string& path);
void write_eval_results(std::ostream& out, std::span<const EvalResult> results);

struct BenchmarkRow {
  std::string model;
  std::vector<double> scores;
  double average = 0.0;
  std::optional<double> relative;  // percent of the reference average
};

struct BenchmarkTable {
  std::vector<std::string> tasks;
  std::vector<BenchmarkRow> rows;
  std::optional<std::string> reference;

  // Aligned columns; the best value of each column among non-reference rows
  // is wrapped in **.
  std::string render_text() const;
  std::string render_csv() const;
};

// Rounds half away from zero to one decimal.
double round_tenths(double value);

// Columns and rows follow first appearance in `results`. Throws
// ValidationError for a missing or duplicated (model, task) cell.
BenchmarkTable report_table(std::span<const EvalResult> results,
                            const std::optional<std::string>& reference_model);

}  // namespace deskllm

#endif  // DESKLLM_EVALHARNESS_H_
