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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "follower/clock.h"
#include "follower/download.h"
#include "follower/scrapers.h"
#include "json.hpp"

namespace follower {

// Config file format: see docs/config.md. Every key can be overridden by an
// environment variable FOLLOWER_<SECTION>_<KEY> (upper case), e.g.
// FOLLOWER_STORE_PATH or FOLLOWER_METRICS_BATCH_SIZE; top-level keys use
// FOLLOWER_<KEY>, e.g. FOLLOWER_SLA.

struct Config {
  struct Feed {
    std::string url;
    std::string name = "registry";
    std::string start_cursor = "0";
    int poll_limit = 100;
    Millis poll_interval = std::chrono::seconds{5};
  } feed;
  struct Store {
    std::string path;
  } store;
  struct Blob {
    std::string root;
    std::uint64_t segment_size = std::uint64_t{1} << 30;
    std::string manager;  // host:port; empty means an in-process manager
    std::string listen = "127.0.0.1:7070";
    Millis ticket_ttl = std::chrono::minutes{10};
    std::optional<std::uint64_t> capacity;
  } blob;
  struct Metrics {
    std::string url;
    RateBudget budget;
  } metrics;
  struct Advisories {
    std::string directory;
    std::string url;
  } advisories;
  RetryPolicy downloads;
  Millis sla = std::chrono::hours{24};
  int workers = 4;

  /// Throws config_invalid naming the first missing field ("feed.url", ...).
  void require(std::initializer_list<std::string_view> fields) const;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
std::optional<std::string> process_env(const std::string& name);

/// Parses a config document after applying environment overrides.
/// Throws config_invalid naming the offending field.
Config parse_config(nlohmann::json doc, const EnvLookup& env = process_env);
/// `path` may be empty: defaults plus environment only.
Config load_config(const std::filesystem::path& path, const EnvLookup& env = process_env);

}  // namespace follower
