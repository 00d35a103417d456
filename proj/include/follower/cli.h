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

#include <ostream>

namespace follower {

/// Runs one `follower` invocation. Exit status: 0 ok, 1 usage error,
/// 2 runtime failure. Failures also print one JSON line
/// {"error": "<name>", "message": "..."} on `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Asks running daemon loops to finish their current step and return.
/// Safe to call from a signal handler.
void request_stop() noexcept;
bool stop_requested() noexcept;
void reset_stop() noexcept;

}  // namespace follower
