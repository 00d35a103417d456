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

#include "follower/errors.h"

namespace follower {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::malformed_version: return "malformed-version";
    case Errc::malformed_range: return "malformed-range";
    case Errc::feed_unavailable: return "feed-unavailable";
    case Errc::cursor_expired: return "cursor-expired";
    case Errc::invalid_doc: return "invalid-doc";
    case Errc::store_unavailable: return "store-unavailable";
    case Errc::constraint_violation: return "constraint-violation";
    case Errc::already_stored: return "already-stored";
    case Errc::store_full: return "store-full";
    case Errc::ticket_expired: return "ticket-expired";
    case Errc::checksum_mismatch: return "checksum-mismatch";
    case Errc::not_found: return "not-found";
    case Errc::io_failure: return "io-failure";
    case Errc::corruption: return "corruption";
    case Errc::rate_limited: return "rate-limited";
    case Errc::upstream_error: return "upstream-error";
    case Errc::scenario_invalid: return "scenario-invalid";
    case Errc::config_invalid: return "config-invalid";
    case Errc::protocol_error: return "protocol-error";
    case Errc::invalid_argument: return "invalid-argument";
  }
  return "unknown";
}

std::optional<Errc> errc_from_name(std::string_view name) {
  for (int i = 0; i <= int(Errc::invalid_argument); ++i)
    if (errc_name(Errc(i)) == name) return Errc(i);
  return std::nullopt;
}

}  // namespace follower
