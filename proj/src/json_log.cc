// Copyright 2026 The Follower Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "follower/json_log.h"

#include <iostream>
#include <mutex>
#include <utility>

#include "follower/clock.h"

namespace follower {

namespace {

std::mutex g_mu;
std::ostream* g_sink = &std::cerr;
LogLevel g_level = LogLevel::info;

const char* level_name(LogLevel l) {
  switch (l) {
    case LogLevel::debug: return "debug";
    case LogLevel::info: return "info";
    case LogLevel::warn: return "warn";
    case LogLevel::error: return "error";
  }
  return "info";
}

}  // namespace

std::ostream* set_log_sink(std::ostream* sink) {
  std::lock_guard lock(g_mu);
  return std::exchange(g_sink, sink);
}

LogLevel set_log_level(LogLevel level) {
  std::lock_guard lock(g_mu);
  return std::exchange(g_level, level);
}

void log_event(LogLevel level, std::string_view event, nlohmann::json fields) {
  std::lock_guard lock(g_mu);
  if (!g_sink || level < g_level) return;
  nlohmann::json line = {{"ts", format_iso8601(SystemClock{}.now())},
                         {"level", level_name(level)},
                         {"event", event}};
  if (fields.is_object()) line.update(fields);
  (*g_sink) << line.dump() << '\n';
}

}  // namespace follower
