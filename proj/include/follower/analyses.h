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
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "follower/clock.h"
#include "follower/store.h"

namespace follower {

// Batch analyses over the core tables. Each materializes its result into a
// table of the attached `metadata_analysis` database, replacing the previous
// contents, and also returns it.

struct DirectDepsReport {
  std::int64_t edges = 0;
  std::map<std::string, std::int64_t> skipped_names;  // unknown dependency name -> edge count
};

/// One row per runtime dependency edge of a live (non-superseded) version
/// whose target name is a known package.
DirectDepsReport materialize_direct_runtime_deps(MetadataStore& store);

struct AsOfPolicy {
  enum class Kind { client_publish_time, latest, fixed };
  Kind kind = Kind::client_publish_time;
  std::optional<TimePoint> at;  // for fixed

  std::string name() const;
  /// "publish", "latest" or an ISO-8601 timestamp.
  static AsOfPolicy parse(std::string_view s);
};

struct ResolvedEdge {
  std::int64_t v = 0;
  std::int64_t depends_on_pkg = 0;
  std::string constraint_dnf;
  std::optional<std::int64_t> resolved_version_id;
  TimePoint resolved_as_of;
};

struct ResolveReport {
  std::vector<ResolvedEdge> edges;
  std::int64_t unparsed_constraints = 0;
};

/// Resolves every materialized direct edge to the greatest satisfying
/// version of the dependency that was published at or before the as-of time
/// and not deleted by then. `now` stands in for the "latest" policy.
ResolveReport resolve_edges(MetadataStore& store, const AsOfPolicy& policy, TimePoint now);

enum class UpdateKind { major, minor, patch, prerelease };
std::string_view update_kind_name(UpdateKind k);

struct UpdateRecord {
  std::int64_t package_id = 0;
  std::int64_t from_version_id = 0;
  std::int64_t to_version_id = 0;
  UpdateKind kind = UpdateKind::patch;
  bool out_of_order = false;

  bool operator==(const UpdateRecord&) const = default;
};

struct UpdateOptions {
  bool include_prereleases = false;
};

/// For each version v published at t: an update from the semver-greatest
/// version published strictly before t that is semver-less than v.
/// out_of_order marks v when a semver-greater version was published first.
std::vector<UpdateRecord> compute_updates(MetadataStore& store, UpdateOptions options = {});

struct DependencyGraph {
  std::vector<std::int64_t> nodes;  // in BFS discovery order
  std::vector<std::pair<std::int64_t, std::int64_t>> edges;
};

/// Breadth-first closure; each node is expanded once, cycles allowed.
DependencyGraph transitive_closure(const std::vector<std::int64_t>& roots,
                                   const std::multimap<std::int64_t, std::int64_t>& adjacency);

/// Closure over the materialized resolved edges.
DependencyGraph transitive_graph(MetadataStore& store, const std::vector<std::int64_t>& roots);

struct VulnerableVersion {
  std::int64_t version_id = 0;
  std::string advisory_id;

  auto operator<=>(const VulnerableVersion&) const = default;
};

struct VulnerabilityReport {
  std::vector<VulnerableVersion> rows;
  std::vector<std::string> unparsed_ranges;    // "<advisory>: <raw>"
  std::vector<std::string> unknown_packages;   // "<advisory>: <package>"
};

/// (version, advisory) for every live version that satisfies some parsed
/// affected range of a non-withdrawn advisory.
VulnerabilityReport vulnerable_versions(MetadataStore& store);

struct ImpactOptions {
  std::optional<std::int64_t> min_weekly_downloads;  // latest metric point must exceed this
  bool require_test_script = false;
};

struct ImpactCandidate {
  std::int64_t client_version_id = 0;
  std::string client_package;
  std::string client_version;
  std::string vulnerable_package;
  std::optional<std::string> blob_key;
};

/// The SQL text run by impact_candidates; parameters ?1 (threshold or NULL)
/// and ?2 (require test script).
extern const char* const kImpactQuery;

/// Vulnerable packages, optionally filtered on their latest weekly download
/// count, joined to their direct runtime dependents, optionally keeping only
/// clients with a test script. Uses the materialized direct edges.
std::vector<ImpactCandidate> impact_candidates(MetadataStore& store, const ImpactOptions& options);

/// RFC 4180 CSV.
void write_csv(std::ostream& out, const QueryResult& table);
std::string csv_escape(std::string_view field);

}  // namespace follower
