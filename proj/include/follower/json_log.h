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

#pragma once

#include <iosfwd>
#include <string_view>

#include "json.hpp"

namespace follower {

enum class LogLevel { debug, info, warn, error };

// Structured logging: one JSON object per line. Fields such as "seq", "job"
// and "ticket" act as correlation ids across processes.
// Both setters return the previous value.
std::ostream* set_log_sink(std::ostream* sink);  // nullptr silences logging
LogLevel set_log_level(LogLevel level);
void log_event(LogLevel level, std::string_view event, nlohmann::json fields = nlohmann::json::object());

}  // namespace follower
