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

#include "deskllm/log.h"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <string>

namespace deskllm {
namespace {

constexpr const char* kNames[] = {"error", "warn", "info", "debug"};

std::atomic<int>& level_storage() {
  static std::atomic<int> level = [] {
    LogLevel parsed = LogLevel::kWarn;
    if (const char* env = std::getenv("DESKLLM_LOG")) {
      parse_log_level(env, parsed);
    }
    return static_cast<int>(parsed);
  }();
  return level;
}

}  // namespace

bool parse_log_level(std::string_view name, LogLevel& out) {
  for (int i = 0; i < 4; ++i) {
    if (name == kNames[i]) {
      out = static_cast<LogLevel>(i);
      return true;
    }
  }
  return false;
}

LogLevel log_level() { return static_cast<LogLevel>(level_storage().load()); }

void set_log_level(LogLevel level) { level_storage().store(static_cast<int>(level)); }

void log_message(LogLevel level, std::string_view message) {
  if (static_cast<int>(level) > level_storage().load()) return;
  static std::mutex mu;
  std::string line = "[";
  line += kNames[static_cast<int>(level)];
  line += "] ";
  line += message;
  line += '\n';
  std::lock_guard<std::mutex> lock(mu);
  std::fwrite(line.data(), 1, line.size(), stderr);
}

}  // namespace deskllm
