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

#ifndef DESKLLM_SERVER_H_
#define DESKLLM_SERVER_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <memory>
#include <string>
#include <vector>

#include "deskllm/model.h"

namespace deskllm {

struct ServerModelEntry {
  std::string id;
  std::string path;
};

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 4891;  // 0 picks a free port
  std::vector<ServerModelEntry> models;
  std::size_t max_queue = 16;  // waiting requests per model
  // Socket read/write timeout and the grace period given to in-flight
  // generations at shutdown.
  int request_timeout_seconds = 30;

  void validate() const;
};

// `key = value` lines; `#` starts a comment. Keys: host, port, max_queue,
// request_timeout_seconds, and `model.<id> = <container path>` once per
// model. Relative model paths resolve against `base_dir` when non-empty.
ServerConfig parse_server_config(std::istream& in, const std::string& base_dir = "");
ServerConfig load_server_config(const std::string& path);

struct HostedModel {
  std::string id;
  Model model;
};

// Test instrumentation. `after_token` runs on the model's worker thread
// after each generated token has been delivered (for streams, after the
// fragment was written to the socket).
struct ServerHooks {
  std::function<void(const std::string& model_id, std::size_t tokens_so_far)>
      after_token;
};

struct ServerTelemetry {
  std::uint64_t started = 0;
  std::uint64_t completed = 0;  // includes cancelled runs
  std::uint64_t cancelled = 0;
  std::uint64_t tokens_generated = 0;
  std::size_t last_tokens = 0;  // tokens produced by the last finished run
};

class Server {
 public:
  // Loads every configured container; throws on the first failure.
  explicit Server(const ServerConfig& config, ServerHooks hooks = {});
  // Serves already-loaded models; `config.models` is ignored.
  Server(const ServerConfig& config, std::vector<HostedModel> models,
         ServerHooks hooks = {});
  ~Server();

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds and begins accepting on a background thread. Throws Error when
  // the address cannot be bound.
  void start();
  // Stops accepting, lets in-flight generations finish for up to
  // request_timeout_seconds, cancels the rest, then joins all threads.
  void stop();

  int port() const;
  ServerTelemetry telemetry() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace deskllm

#endif  // DESKLLM_SERVER_H_
