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

// Command-line front end. Payload goes to stdout, diagnostics to stderr.

#include <atomic>
#include <csignal>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "deskllm/container.h"
#include "deskllm/curate.h"
#include "deskllm/errors.h"
#include "deskllm/evalharness.h"
#include "deskllm/generate.h"
#include "deskllm/log.h"
#include "deskllm/lora.h"
#include "deskllm/model.h"
#include "deskllm/parallel.h"
#include "deskllm/server.h"
#include "json.hpp"

namespace {

using namespace deskllm;

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& seed) {
  if (seed) return *seed;
  std::random_device rd;
  const std::uint64_t chosen = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  std::cerr << "seed: " << chosen << "\n";
  return chosen;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  return out;
}

std::string read_text(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

struct SamplingFlags {
  float temperature = 0.0f;
  std::uint32_t top_k = 0;
  float top_p = 1.0f;
  float rep_penalty = 1.0f;
  std::optional<std::uint64_t> seed;
  std::uint32_t max_tokens = 128;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--max-tokens", max_tokens, "Tokens to generate")->capture_default_str();
    cmd->add_option("--temperature", temperature, "0 = greedy")->capture_default_str();
    cmd->add_option("--top-k", top_k, "0 = disabled")->capture_default_str();
    cmd->add_option("--top-p", top_p, "1 = disabled")->capture_default_str();
    cmd->add_option("--rep-penalty", rep_penalty, "Repetition penalty >= 1")->capture_default_str();
    cmd->add_option("--seed", seed, "Sampling seed (chosen and printed if absent)");
  }

  SamplerParams params() const {
    SamplerParams p;
    p.temperature = temperature;
    p.top_k = top_k;
    p.top_p = top_p;
    p.repetition_penalty = rep_penalty;
    p.max_tokens = max_tokens;
    p.seed = resolve_seed(seed);
    p.validate();
    return p;
  }
};

LoraTarget parse_target(const std::string& name) {
  // layers.<i>.<projection>
  const std::string prefix = "layers.";
  if (name.rfind(prefix, 0) == 0) {
    const auto dot = name.find('.', prefix.size());
    if (dot != std::string::npos) {
      const std::string index = name.substr(prefix.size(), dot - prefix.size());
      const auto kind = parse_proj_name(name.substr(dot + 1));
      if (!index.empty() && index.find_first_not_of("0123456789") == std::string::npos && kind) {
        return {static_cast<std::uint32_t>(std::stoul(index)), *kind};
      }
    }
  }
  throw ValidationError("bad LoRA target " + name + " (expected layers.<i>.attn.wq style)");
}

std::string json_line(const nlohmann::ordered_json& j) {
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale assistant model toolkit"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: hardware count)");

  // new
  auto* cmd_new = app.add_subcommand("new", "Write a randomly initialized model");
  std::string new_out;
  ModelConfig new_cfg;
  std::optional<std::uint64_t> new_seed;
  cmd_new->add_option("--out", new_out, "Output container")->required();
  cmd_new->add_option("--vocab", new_cfg.vocab_size)->capture_default_str();
  cmd_new->add_option("--layers", new_cfg.n_layers)->capture_default_str();
  cmd_new->add_option("--d-model", new_cfg.d_model)->capture_default_str();
  cmd_new->add_option("--heads", new_cfg.n_heads)->capture_default_str();
  cmd_new->add_option("--d-ff", new_cfg.d_ff)->capture_default_str();
  cmd_new->add_option("--max-seq", new_cfg.max_seq)->capture_default_str();
  cmd_new->add_option("--seed", new_seed);

  // quantize
  auto* cmd_quant = app.add_subcommand("quantize", "Convert projections to 4-bit blocks");
  std::string quant_in, quant_out;
  cmd_quant->add_option("--in", quant_in)->required();
  cmd_quant->add_option("--out", quant_out)->required();

  // generate
  auto* cmd_gen = app.add_subcommand("generate", "Complete a prompt");
  std::string gen_model, gen_prompt, gen_adapter;
  bool gen_stream = false;
  SamplingFlags gen_flags;
  cmd_gen->add_option("--model", gen_model)->required();
  cmd_gen->add_option("--prompt", gen_prompt)->required();
  cmd_gen->add_option("--adapter", gen_adapter, "LoRA adapter applied at runtime");
  cmd_gen->add_flag("--stream", gen_stream, "Print fragments as they are produced");
  gen_flags.add_to(cmd_gen);

  // chat
  auto* cmd_chat = app.add_subcommand("chat", "Interactive session; /quit exits");
  std::string chat_model;
  SamplingFlags chat_flags;
  cmd_chat->add_option("--model", chat_model)->required();
  chat_flags.add_to(cmd_chat);

  // curate
  auto* cmd_cur = app.add_subcommand("curate", "Filter and deduplicate prompt-response pairs");
  std::string cur_in, cur_out, cur_report;
  CurationConfig cur_cfg;
  cmd_cur->add_option("--in", cur_in)->required();
  cmd_cur->add_option("--out", cur_out)->required();
  cmd_cur->add_option("--report", cur_report)->required();
  cmd_cur->add_option("--min-chars", cur_cfg.min_chars)->capture_default_str();
  cmd_cur->add_option("--min-words", cur_cfg.min_words)->capture_default_str();
  cmd_cur->add_option("--jaccard", cur_cfg.near_dup_jaccard)->capture_default_str();
  cmd_cur->add_option("--drop-source", cur_cfg.drop_sources, "Source to remove (repeatable)");
  cmd_cur->add_option("--seed", cur_cfg.seed, "MinHash seed")->capture_default_str();

  // expand
  auto* cmd_exp = app.add_subcommand("expand", "Expand a slot template into prompts");
  std::string exp_template, exp_slots, exp_out;
  std::size_t exp_limit = 0;
  std::optional<std::uint64_t> exp_seed;
  cmd_exp->add_option("--template", exp_template, "File holding the template text")->required();
  cmd_exp->add_option("--slots", exp_slots, "JSON object: slot name -> list of values")->required();
  cmd_exp->add_option("--out", exp_out)->required();
  cmd_exp->add_option("--limit", exp_limit, "Sample this many combinations (0 = all)");
  cmd_exp->add_option("--seed", exp_seed);

  // project
  auto* cmd_proj = app.add_subcommand("project", "2D map of a pair corpus as CSV");
  std::string proj_in, proj_out;
  std::uint64_t proj_seed = 0;
  cmd_proj->add_option("--in", proj_in)->required();
  cmd_proj->add_option("--out", proj_out)->required();
  cmd_proj->add_option("--seed", proj_seed, "Feature hashing seed")->capture_default_str();

  // eval
  auto* cmd_eval = app.add_subcommand("eval", "Evaluation harness");
  cmd_eval->require_subcommand(1);
  auto* cmd_ppl = cmd_eval->add_subcommand("ppl", "Clipped perplexity of responses");
  std::string ppl_model, ppl_data, ppl_adapter;
  double ppl_clip = 100.0;
  cmd_ppl->add_option("--model", ppl_model)->required();
  cmd_ppl->add_option("--data", ppl_data)->required();
  cmd_ppl->add_option("--adapter", ppl_adapter);
  cmd_ppl->add_option("--clip", ppl_clip)->capture_default_str();
  auto* cmd_mc = cmd_eval->add_subcommand("mc", "Multiple-choice accuracy");
  std::string mc_model, mc_task, mc_name, mc_task_name;
  cmd_mc->add_option("--model", mc_model)->required();
  cmd_mc->add_option("--task", mc_task)->required();
  cmd_mc->add_option("--name", mc_name, "Model name in the result (default: file stem)");
  cmd_mc->add_option("--task-name", mc_task_name, "Task name (default: file stem)");
  auto* cmd_rep = cmd_eval->add_subcommand("report", "Benchmark table from result files");
  std::vector<std::string> rep_in;
  std::string rep_out, rep_csv;
  std::optional<std::string> rep_reference;
  cmd_rep->add_option("--in", rep_in)->required();
  cmd_rep->add_option("--out", rep_out)->required();
  cmd_rep->add_option("--csv", rep_csv, "Also write comma-separated form");
  cmd_rep->add_option("--reference", rep_reference, "Model for the relative column");

  // tune-lora
  auto* cmd_tune = app.add_subcommand("tune-lora", "Finite-difference LoRA fine-tuning");
  std::string tune_model, tune_data, tune_out;
  std::uint32_t tune_rank = 4;
  float tune_alpha = 8.0f;
  FinetuneOptions tune_opts;
  std::vector<std::string> tune_targets;
  std::optional<std::uint64_t> tune_seed;
  cmd_tune->add_option("--model", tune_model)->required();
  cmd_tune->add_option("--data", tune_data)->required();
  cmd_tune->add_option("--out", tune_out)->required();
  cmd_tune->add_option("--rank", tune_rank)->capture_default_str();
  cmd_tune->add_option("--alpha", tune_alpha)->capture_default_str();
  cmd_tune->add_option("--steps", tune_opts.steps)->capture_default_str();
  cmd_tune->add_option("--lr", tune_opts.lr)->capture_default_str();
  cmd_tune->add_option("--eps", tune_opts.fd_eps, "Finite-difference step")->capture_default_str();
  cmd_tune->add_option("--max-params", tune_opts.max_parameters)->capture_default_str();
  cmd_tune->add_option("--target", tune_targets, "layers.<i>.<proj> (default: wq and wv everywhere)");
  cmd_tune->add_option("--seed", tune_seed);

  // merge-lora
  auto* cmd_merge = app.add_subcommand("merge-lora", "Fold an adapter into the weights");
  std::string merge_model, merge_adapter, merge_out;
  cmd_merge->add_option("--model", merge_model)->required();
  cmd_merge->add_option("--adapter", merge_adapter)->required();
  cmd_merge->add_option("--out", merge_out)->required();

  // serve
  auto* cmd_serve = app.add_subcommand("serve", "HTTP completion server");
  std::string serve_config;
  cmd_serve->add_option("--config", serve_config)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (threads > 0) set_worker_count(threads);

    if (*cmd_new) {
      new_cfg.validate();
      Model model;
      model.config = new_cfg;
      model.weights = new_random(new_cfg, resolve_seed(new_seed));
      model.tokenizer = default_tokenizer(new_cfg.vocab_size);
      save_model(new_out, model);
    } else if (*cmd_quant) {
      Model model = load_model(quant_in);
      model.weights = quantize_weights(model.weights);
      save_model(quant_out, model);
    } else if (*cmd_gen) {
      const Model model = load_model(gen_model);
      std::optional<LoraAdapter> adapter;
      GenerateOptions options;
      if (!gen_adapter.empty()) {
        adapter = load_adapter(gen_adapter);
        validate_adapter(*adapter, model.config);
        options.adapter = &*adapter;
      }
      TokenCallback on_token;
      if (gen_stream) {
        on_token = [](TokenId, std::string_view fragment) {
          std::cout << fragment << std::flush;
          return true;
        };
      }
      const auto result = generate(model, gen_prompt, gen_flags.params(), on_token, options);
      if (!gen_stream) std::cout << result.text;
      if (!result.text.empty()) std::cout << "\n";
      std::cerr << "finish: " << finish_reason_name(result.finish_reason) << ", tokens: "
                << result.token_ids.size() << "\n";
    } else if (*cmd_chat) {
      const Model model = load_model(chat_model);
      SamplerParams params = chat_flags.params();
      std::vector<ChatTurn> history;
      std::string line;
      for (;;) {
        std::cerr << "> " << std::flush;
        if (!std::getline(std::cin, line) || line == "/quit") break;
        const std::string prompt = apply_chat_template(history, line);
        for (;;) {
          try {
            const auto result = generate(model, prompt, params, [](TokenId, std::string_view f) {
              std::cout << f << std::flush;
              return true;
            });
            std::cout << "\n";
            history.push_back({line, result.text});
            break;
          } catch (const ContextOverflowError&) {
            if (history.empty()) throw;
            history.erase(history.begin());  // forget the oldest turn
          }
        }
        ++params.seed;
      }
    } else if (*cmd_cur) {
      const auto pairs = ingest(cur_in);
      const auto result = curate_pipeline(pairs, cur_cfg);
      auto out = open_out(cur_out);
      write_pairs(out, result.kept);
      auto report = open_out(cur_report);
      report << result.report.to_json();
      std::cerr << "kept " << result.kept.size() << " of " << pairs.size() << " pairs\n";
    } else if (*cmd_exp) {
      SchemaTemplate schema;
      schema.text = read_text(exp_template);
      while (!schema.text.empty() && (schema.text.back() == '\n' || schema.text.back() == '\r')) {
        schema.text.pop_back();
      }
      const auto slots = nlohmann::json::parse(read_text(exp_slots));
      if (!slots.is_object()) throw SchemaError("--slots must hold a JSON object");
      for (const auto& [name, values] : slots.items()) {
        schema.slots[name] = values.get<std::vector<std::string>>();
      }
      const std::uint64_t seed = exp_limit > 0 ? resolve_seed(exp_seed) : exp_seed.value_or(0);
      auto out = open_out(exp_out);
      for (const auto& prompt : schema_expand(schema, exp_limit, seed)) {
        out << json_line({{"prompt", prompt}}) << "\n";
      }
    } else if (*cmd_proj) {
      const auto pairs = ingest(proj_in);
      auto out = open_out(proj_out);
      write_projection_csv(out, project_2d(pairs, proj_seed));
    } else if (*cmd_ppl) {
      const Model model = load_model(ppl_model);
      std::optional<LoraAdapter> adapter;
      if (!ppl_adapter.empty()) {
        adapter = load_adapter(ppl_adapter);
        validate_adapter(*adapter, model.config);
      }
      const TransformerLm lm(model, adapter ? &*adapter : nullptr);
      const auto pairs = ingest(ppl_data);
      const auto report = clipped_perplexity(lm, model.tokenizer, pairs, ppl_clip);
      std::cout << json_line({{"mean_perplexity", report.mean_perplexity},
                              {"clip", report.clip},
                              {"scored", report.records.size()},
                              {"skipped", report.skipped.size()}})
                << "\n";
    } else if (*cmd_mc) {
      const Model model = load_model(mc_model);
      const TransformerLm lm(model);
      if (mc_name.empty()) mc_name = std::filesystem::path(mc_model).stem().string();
      if (mc_task_name.empty()) mc_task_name = std::filesystem::path(mc_task).stem().string();
      const McTask task = load_mc_task(mc_task, mc_task_name);
      const EvalResult result = mc_accuracy(lm, model.tokenizer, task, mc_name);
      write_eval_results(std::cout, std::span(&result, 1));
    } else if (*cmd_rep) {
      std::vector<EvalResult> results;
      for (const auto& path : rep_in) {
        auto part = load_eval_results(path);
        results.insert(results.end(), part.begin(), part.end());
      }
      const auto table = report_table(results, rep_reference);
      auto out = open_out(rep_out);
      out << table.render_text();
      if (!rep_csv.empty()) {
        auto csv = open_out(rep_csv);
        csv << table.render_csv();
      }
    } else if (*cmd_tune) {
      const Model model = load_model(tune_model);
      if (model.weights.is_quantized()) {
        throw AdapterError("tune-lora needs an f32 model; Q4 projections cannot be tuned");
      }
      std::vector<LoraTarget> targets;
      for (const auto& t : tune_targets) targets.push_back(parse_target(t));
      if (targets.empty()) targets = default_lora_targets(model.config);
      const LoraAdapter init = new_lora_adapter(model.config, tune_rank, tune_alpha, targets,
                                                resolve_seed(tune_seed));
      const auto pairs = ingest(tune_data);
      const auto result = lora_finetune_fd(model, init, pairs, tune_opts);
      for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
        log_info("step " + std::to_string(i) + " loss " + std::to_string(result.loss_trace[i]));
      }
      std::cerr << "loss " << result.loss_trace.front() << " -> " << result.loss_trace.back()
                << (result.diverged ? " (diverged; kept last finite adapter)" : "") << "\n";
      save_adapter(tune_out, result.adapter);
    } else if (*cmd_merge) {
      Model model = load_model(merge_model);
      const LoraAdapter adapter = load_adapter(merge_adapter);
      model.weights = lora_merge(model.weights, model.config, adapter);
      save_model(merge_out, model);
    } else if (*cmd_serve) {
      const ServerConfig config = load_server_config(serve_config);
      Server server(config);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.start();
      std::cerr << "listening on " << config.host << ":" << server.port() << "\n";
      while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      std::cerr << "shutting down\n";
      server.stop();
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "error: " << msg << "\n";
    return 1;
  }
  return 0;
}
