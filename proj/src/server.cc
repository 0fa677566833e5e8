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

#include "deskllm/server.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <thread>

#include "deskllm/container.h"
#include "deskllm/errors.h"
#include "deskllm/generate.h"
#include "deskllm/log.h"
#include "httplib.h"
#include "json.hpp"

namespace deskllm {
namespace {

using nlohmann::json;

std::string trim_copy(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

long parse_int_value(const std::string& key, const std::string& value, std::size_t line) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) {
    throw LineParseError(line, key + " must be an integer, got \"" + value + "\"");
  }
  return v;
}

std::string error_body(const std::string& type, const std::string& message,
                       const std::string& field = "") {
  json err = {{"type", type}, {"message", message}};
  if (!field.empty()) err["field"] = field;
  return json{{"error", err}}.dump(-1, ' ', false, json::error_handler_t::replace);
}

struct RequestError {
  int status;
  std::string body;
};

RequestError bad_field(const std::string& field, const std::string& message) {
  return {400, error_body("invalid_request", field + ": " + message, field)};
}

struct CompletionRequest {
  std::string model;
  std::string prompt;
  SamplerParams params;
  bool seed_given = false;
  bool stream = false;
};

// Parses and validates a request body. Never throws for any input.
std::optional<RequestError> parse_request(const std::string& body,
                                          CompletionRequest& req) {
  const json j = json::parse(body, nullptr, false);
  if (j.is_discarded()) {
    return RequestError{400, error_body("invalid_json", "body is not valid JSON")};
  }
  if (!j.is_object()) {
    return RequestError{400, error_body("invalid_json", "body must be a JSON object")};
  }
  auto get_string = [&](const char* key, std::string& out) -> std::optional<RequestError> {
    auto it = j.find(key);
    if (it == j.end()) return bad_field(key, "is required");
    if (!it->is_string()) return bad_field(key, "must be a string");
    out = it->get<std::string>();
    return std::nullopt;
  };
  auto get_uint = [&](const char* key, std::uint64_t max, std::uint64_t& out)
      -> std::optional<RequestError> {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_number_unsigned()) {
      if (it->is_number_integer() || it->is_number_float()) {
        return bad_field(key, "must be a non-negative integer");
      }
      return bad_field(key, "must be an integer");
    }
    const std::uint64_t v = it->get<std::uint64_t>();
    if (v > max) return bad_field(key, "must be at most " + std::to_string(max));
    out = v;
    return std::nullopt;
  };
  auto get_float = [&](const char* key, float& out) -> std::optional<RequestError> {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_number()) return bad_field(key, "must be a number");
    const double v = it->get<double>();
    if (!std::isfinite(v) || std::fabs(v) > 1e30) return bad_field(key, "out of range");
    out = static_cast<float>(v);
    return std::nullopt;
  };

  if (auto e = get_string("model", req.model)) return e;
  if (auto e = get_string("prompt", req.prompt)) return e;
  std::uint64_t max_tokens = req.params.max_tokens;
  if (auto e = get_uint("max_tokens", 1u << 20, max_tokens)) return e;
  req.params.max_tokens = static_cast<std::uint32_t>(max_tokens);
  std::uint64_t top_k = 0;
  if (auto e = get_uint("top_k", 1u << 30, top_k)) return e;
  req.params.top_k = static_cast<std::uint32_t>(top_k);
  if (auto e = get_float("temperature", req.params.temperature)) return e;
  if (auto e = get_float("top_p", req.params.top_p)) return e;
  if (auto e = get_float("repetition_penalty", req.params.repetition_penalty)) return e;
  if (auto it = j.find("seed"); it != j.end() && !it->is_null()) {
    std::uint64_t seed = 0;
    if (auto e = get_uint("seed", UINT64_MAX, seed)) return e;
    req.params.seed = seed;
    req.seed_given = true;
  }
  if (auto it = j.find("stream"); it != j.end() && !it->is_null()) {
    if (!it->is_boolean()) return bad_field("stream", "must be a boolean");
    req.stream = it->get<bool>();
  }
  try {
    req.params.validate();
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    const auto colon = what.find(':');
    const std::string field = colon == std::string::npos ? "" : what.substr(0, colon);
    return RequestError{400, error_body("invalid_request", what, field)};
  }
  return std::nullopt;
}

struct Job {
  CompletionRequest request;
  std::atomic<bool> cancel{false};

  std::mutex mu;
  std::condition_variable cv;
  // Stream handoff: fragments queued by the worker, and how many of them
  // the connection thread has finished writing.
  std::deque<std::string> events;
  std::size_t pushed = 0;
  std::size_t written = 0;
  bool done = false;
  GenerationResult result;
  std::optional<RequestError> failure;
};

}  // namespace

void ServerConfig::validate() const {
  if (models.empty()) throw ValidationError("server config: no models configured");
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (models[i].id.empty()) throw ValidationError("server config: empty model id");
    for (std::size_t k = 0; k < i; ++k) {
      if (models[k].id == models[i].id) {
        throw ValidationError("server config: duplicate model id " + models[i].id);
      }
    }
  }
  if (port < 0 || port > 65535) throw ValidationError("server config: port out of range");
  if (max_queue == 0) throw ValidationError("server config: max_queue must be positive");
  if (request_timeout_seconds <= 0) {
    throw ValidationError("server config: request_timeout_seconds must be positive");
  }
}

ServerConfig parse_server_config(std::istream& in, const std::string& base_dir) {
  ServerConfig config;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim_copy(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw LineParseError(line_no, "expected key = value");
    const std::string key = trim_copy(line.substr(0, eq));
    const std::string value = trim_copy(line.substr(eq + 1));
    if (key == "host") {
      config.host = value;
    } else if (key == "port") {
      config.port = static_cast<int>(parse_int_value(key, value, line_no));
    } else if (key == "max_queue") {
      const long v = parse_int_value(key, value, line_no);
      if (v <= 0) throw LineParseError(line_no, "max_queue must be positive");
      config.max_queue = static_cast<std::size_t>(v);
    } else if (key == "request_timeout_seconds") {
      config.request_timeout_seconds = static_cast<int>(parse_int_value(key, value, line_no));
    } else if (key.rfind("model.", 0) == 0 && key.size() > 6) {
      std::filesystem::path p(value);
      if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
      config.models.push_back({key.substr(6), p.string()});
    } else {
      throw LineParseError(line_no, "unknown key " + key);
    }
  }
  config.validate();
  return config;
}

ServerConfig load_server_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return parse_server_config(in, std::filesystem::path(path).parent_path().string());
}

struct Server::Impl {
  struct Worker {
    std::string id;
    Model model;
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::shared_ptr<Job>> queue;
    std::shared_ptr<Job> running;
    std::thread thread;
  };

  ServerConfig config;
  ServerHooks hooks;
  std::vector<std::unique_ptr<Worker>> workers;
  httplib::Server http;
  std::thread listener;
  int bound_port = -1;
  std::atomic<bool> stopping{false};
  std::atomic<bool> workers_exit{false};

  mutable std::mutex stats_mu;
  ServerTelemetry stats;

  Impl(const ServerConfig& c, std::vector<HostedModel> models, ServerHooks h)
      : config(c), hooks(std::move(h)) {
    if (models.empty()) throw ValidationError("server: no models to serve");
    for (auto& m : models) {
      for (const auto& w : workers) {
        if (w->id == m.id) throw ValidationError("server: duplicate model id " + m.id);
      }
      auto w = std::make_unique<Worker>();
      w->id = std::move(m.id);
      w->model = std::move(m.model);
      workers.push_back(std::move(w));
    }
    for (auto& w : workers) {
      Worker* raw = w.get();
      w->thread = std::thread([this, raw] { worker_loop(*raw); });
    }
    setup_routes();
  }

  ~Impl() {
    shutdown_workers();
  }

  Worker* find_worker(const std::string& id) {
    for (auto& w : workers) {
      if (w->id == id) return w.get();
    }
    return nullptr;
  }

  void shutdown_workers() {
    workers_exit = true;
    for (auto& w : workers) {
      {
        std::lock_guard<std::mutex> lock(w->mu);
        for (auto& job : w->queue) job->cancel = true;
        if (w->running) w->running->cancel = true;
      }
      w->cv.notify_all();
    }
    for (auto& w : workers) {
      if (w->thread.joinable()) w->thread.join();
    }
  }

  void record(const GenerationResult& r) {
    std::lock_guard<std::mutex> lock(stats_mu);
    ++stats.completed;
    if (r.finish_reason == FinishReason::kCancelled) ++stats.cancelled;
    stats.last_tokens = r.token_ids.size();
  }

  void run_job(Worker& w, Job& job) {
    {
      std::lock_guard<std::mutex> lock(stats_mu);
      ++stats.started;
    }
    std::size_t produced = 0;
    TokenCallback on_token = [&](TokenId id, std::string_view fragment) {
      ++produced;
      {
        std::lock_guard<std::mutex> lock(stats_mu);
        ++stats.tokens_generated;
      }
      if (job.request.stream) {
        json ev = {{"token_id", id}, {"text", std::string(fragment)}};
        std::string data =
            "data: " + ev.dump(-1, ' ', false, json::error_handler_t::replace) + "\n\n";
        std::unique_lock<std::mutex> lock(job.mu);
        job.events.push_back(std::move(data));
        const std::size_t ticket = ++job.pushed;
        job.cv.notify_all();
        job.cv.wait(lock, [&] { return job.written >= ticket || job.cancel.load(); });
      }
      if (hooks.after_token) hooks.after_token(w.id, produced);
      return !job.cancel.load();
    };
    GenerateOptions options;
    options.cancel = &job.cancel;
    GenerationResult result;
    std::optional<RequestError> failure;
    try {
      result = generate(w.model, job.request.prompt, job.request.params, on_token, options);
    } catch (const ContextOverflowError& e) {
      failure = RequestError{422, error_body("context_overflow", e.what())};
    } catch (const std::exception& e) {
      failure = RequestError{500, error_body("internal", e.what())};
    }
    if (!failure) record(result);
    {
      std::lock_guard<std::mutex> lock(job.mu);
      job.result = std::move(result);
      job.failure = std::move(failure);
      job.done = true;
    }
    job.cv.notify_all();
  }

  void worker_loop(Worker& w) {
    for (;;) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock<std::mutex> lock(w.mu);
        w.cv.wait(lock, [&] { return workers_exit.load() || !w.queue.empty(); });
        if (w.queue.empty()) return;
        job = std::move(w.queue.front());
        w.queue.pop_front();
        w.running = job;
      }
      run_job(w, *job);
      std::lock_guard<std::mutex> lock(w.mu);
      w.running.reset();
      w.cv.notify_all();
    }
  }

  bool idle() {
    for (auto& w : workers) {
      std::lock_guard<std::mutex> lock(w->mu);
      if (w->running || !w->queue.empty()) return false;
    }
    return true;
  }

  void send_error(httplib::Response& res, const RequestError& e) {
    res.status = e.status;
    res.set_content(e.body, "application/json");
  }

  void handle_completion(const httplib::Request& http_req, httplib::Response& res) {
    if (stopping) {
      send_error(res, {503, error_body("shutting_down", "server is shutting down")});
      return;
    }
    auto job = std::make_shared<Job>();
    if (auto e = parse_request(http_req.body, job->request)) {
      send_error(res, *e);
      return;
    }
    CompletionRequest& req = job->request;
    Worker* w = find_worker(req.model);
    if (!w) {
      send_error(res, {404, error_body("model_not_found", "no model with id " + req.model)});
      return;
    }
    const std::size_t needed = 1 + w->model.tokenizer.encode(req.prompt).size() +
                               req.params.max_tokens;
    if (needed > w->model.config.max_seq) {
      send_error(res, {422, error_body("context_overflow",
                                       "prompt plus max_tokens needs " + std::to_string(needed) +
                                           " positions, context window is " +
                                           std::to_string(w->model.config.max_seq))});
      return;
    }
    if (!req.seed_given) req.params.seed = std::random_device{}() * 0x100000001ull ^
                                            std::random_device{}();
    {
      std::lock_guard<std::mutex> lock(w->mu);
      if (w->queue.size() >= config.max_queue) {
        send_error(res, {429, error_body("queue_full", "too many queued requests for " + req.model)});
        return;
      }
      w->queue.push_back(job);
    }
    w->cv.notify_all();

    if (!req.stream) {
      std::unique_lock<std::mutex> lock(job->mu);
      job->cv.wait(lock, [&] { return job->done; });
      if (job->failure) {
        send_error(res, *job->failure);
        return;
      }
      json body = {{"text", job->result.text},
                   {"token_count", job->result.token_ids.size()},
                   {"finish_reason", finish_reason_name(job->result.finish_reason)},
                   {"seed", req.params.seed},
                   {"model", req.model}};
      res.status = 200;
      res.set_content(body.dump(-1, ' ', false, json::error_handler_t::replace),
                      "application/json");
      return;
    }

    res.status = 200;
    res.set_header("Cache-Control", "no-cache");
    res.set_header("X-DeskLLM-Seed", std::to_string(req.params.seed));
    res.set_chunked_content_provider(
        "text/event-stream",
        [job](std::size_t, httplib::DataSink& sink) {
          std::unique_lock<std::mutex> lock(job->mu);
          for (;;) {
            if (!job->events.empty()) {
              std::string data = std::move(job->events.front());
              job->events.pop_front();
              lock.unlock();
              const bool ok = sink.write(data.data(), data.size());
              lock.lock();
              ++job->written;
              if (!ok) job->cancel = true;
              job->cv.notify_all();
              return ok;
            }
            if (job->done) {
              lock.unlock();
              static constexpr char kDone[] = "data: [DONE]\n\n";
              if (!job->failure) sink.write(kDone, sizeof(kDone) - 1);
              sink.done();
              return true;
            }
            // Poll the peer while waiting so a client that leaves before
            // the first token still cancels its run.
            job->cv.wait_for(lock, std::chrono::milliseconds(50));
            if (job->events.empty() && !job->done) {
              lock.unlock();
              const bool alive = sink.is_writable();
              lock.lock();
              if (!alive) {
                job->cancel = true;
                job->cv.notify_all();
                return false;
              }
            }
          }
        },
        [job](bool) {
          std::lock_guard<std::mutex> lock(job->mu);
          if (!job->done) job->cancel = true;
          job->cv.notify_all();
        });
  }

  void setup_routes() {
    const std::size_t threads =
        std::min<std::size_t>(256, workers.size() * (config.max_queue + 1) + 4);
    http.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    http.set_keep_alive_timeout(1);
    http.set_tcp_nodelay(true);
    http.set_read_timeout(config.request_timeout_seconds, 0);
    http.set_write_timeout(config.request_timeout_seconds, 0);
    http.set_payload_max_length(std::size_t{8} << 20);

    http.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", "application/json");
    });
    http.Get("/v1/models", [this](const httplib::Request&, httplib::Response& res) {
      json data = json::array();
      for (const auto& w : workers) {
        data.push_back({{"id", w->id},
                        {"quantized", w->model.weights.is_quantized()},
                        {"vocab_size", w->model.config.vocab_size}});
      }
      res.set_content(json{{"object", "list"}, {"data", data}}.dump(), "application/json");
    });
    http.Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        handle_completion(req, res);
      } catch (const std::exception& e) {
        log_error(std::string("completion handler: ") + e.what());
        send_error(res, {400, error_body("invalid_request", e.what())});
      }
    });
    http.set_exception_handler(
        [this](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
          send_error(res, {400, error_body("invalid_request", "unprocessable request")});
        });
    http.set_logger([](const httplib::Request& req, const httplib::Response& res) {
      log_info(req.method + " " + req.path + " -> " + std::to_string(res.status));
    });
  }
};

Server::Server(const ServerConfig& config, ServerHooks hooks) {
  config.validate();
  std::vector<HostedModel> models;
  for (const auto& entry : config.models) {
    log_info("loading model " + entry.id + " from " + entry.path);
    models.push_back({entry.id, load_model(entry.path)});
  }
  impl_ = std::make_unique<Impl>(config, std::move(models), std::move(hooks));
}

Server::Server(const ServerConfig& config, std::vector<HostedModel> models,
               ServerHooks hooks)
    : impl_(std::make_unique<Impl>(config, std::move(models), std::move(hooks))) {}

Server::~Server() { stop(); }

void Server::start() {
  Impl& s = *impl_;
  if (s.listener.joinable()) return;
  if (s.config.port == 0) {
    s.bound_port = s.http.bind_to_any_port(s.config.host);
  } else if (s.http.bind_to_port(s.config.host, s.config.port)) {
    s.bound_port = s.config.port;
  } else {
    s.bound_port = -1;
  }
  if (s.bound_port < 0) {
    throw Error("cannot bind " + s.config.host + ":" + std::to_string(s.config.port));
  }
  s.listener = std::thread([&s] { s.http.listen_after_bind(); });
  s.http.wait_until_ready();
}

void Server::stop() {
  if (!impl_) return;
  Impl& s = *impl_;
  if (s.stopping.exchange(true)) return;
  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::seconds(s.config.request_timeout_seconds);
  while (!s.idle() && std::chrono::steady_clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  s.shutdown_workers();
  if (s.listener.joinable()) {
    s.http.stop();
    s.listener.join();
  }
}

int Server::port() const { return impl_->bound_port; }

ServerTelemetry Server::telemetry() const {
  std::lock_guard<std::mutex> lock(impl_->stats_mu);
  return impl_->stats;
}

}  // namespace deskllm
