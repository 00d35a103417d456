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

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace follower {

enum class Errc {
  malformed_version,
  malformed_range,
  feed_unavailable,
  cursor_expired,
  invalid_doc,
  store_unavailable,
  constraint_violation,
  already_stored,
  store_full,
  ticket_expired,
  checksum_mismatch,
  not_found,
  io_failure,
  corruption,
  rate_limited,
  upstream_error,
  scenario_invalid,
  config_invalid,
  protocol_error,
  invalid_argument,
};

/// Stable, machine-parseable name ("malformed-range", "not-found", ...).
std::string_view errc_name(Errc code);
std::optional<Errc> errc_from_name(std::string_view name);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace follower
