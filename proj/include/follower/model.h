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
#include <optional>
#include <string>
#include <vector>

#include "follower/clock.h"
#include "follower/semver.h"
#include "json.hpp"

namespace follower {

enum class DependencyKind { runtime, dev, peer, optional };
std::string_view kind_name(DependencyKind k);
std::optional<DependencyKind> parse_kind(std::string_view s);

struct DependencySpec {
  std::string name;
  std::string constraint_raw;
  std::optional<semver::ConstraintDNF> constraint;  // present iff constraint_raw parsed
  DependencyKind kind = DependencyKind::runtime;
};

struct RepositoryInfo {
  std::string host;
  std::string owner;
  std::string name;
};

/// One version entry of a package document, with the fields we interpret
/// pulled out and everything else kept verbatim in extra_metadata.
struct VersionManifest {
  std::string package_name;
  std::string version_string;  // the key used upstream
  semver::Version version;
  std::optional<TimePoint> published_at;
  std::optional<std::string> tarball_url;
  std::optional<RepositoryInfo> repository;
  std::vector<DependencySpec> dependencies;
  nlohmann::json extra_metadata = nlohmann::json::object();
  std::string digest;  // SHA-256 of the canonical manifest JSON
};

struct StoredVersion {
  std::int64_t id = 0;
  std::string version;
  std::string digest;
  bool deleted = false;
  int generation = 0;
};

/// What the store currently knows about a package: its live (non-superseded)
/// version rows.
struct PackageState {
  std::int64_t id = 0;
  std::string name;
  bool deleted = false;
  std::vector<StoredVersion> versions;

  const StoredVersion* find(std::string_view version) const {
    for (const auto& v : versions)
      if (v.version == version) return &v;
    return nullptr;
  }
};

struct MetricPoint {
  std::string week_start;  // YYYY-MM-DD
  std::int64_t counter = 0;
};

struct AffectedRange {
  std::string raw;
  std::optional<semver::ConstraintDNF> constraint;
};

struct Advisory {
  std::string advisory_id;
  std::string package_name;
  std::vector<AffectedRange> affected_ranges;
  std::string severity;
  std::vector<std::string> cwes;
  bool withdrawn = false;
  std::optional<TimePoint> modified;
};

}  // namespace follower
