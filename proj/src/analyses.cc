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

#include "follower/analyses.h"

#include <algorithm>
#include <deque>
#include <limits>
#include <unordered_map>
#include <unordered_set>

#include "follower/errors.h"
#include "follower/json_log.h"
#include "follower/semver.h"

namespace follower {

namespace {

struct VersionRow {
  std::int64_t id = 0;
  std::int64_t package_id = 0;
  semver::Version version;
  std::int64_t published_at = 0;
  std::optional<std::int64_t> deleted_at;  // set when flagged deleted
};

/// Live (non-superseded) version rows grouped by package.
std::unordered_map<std::int64_t, std::vector<VersionRow>> load_versions(MetadataStore& store) {
  std::unordered_map<std::int64_t, std::vector<VersionRow>> out;
  std::lock_guard lock(store.mutex());
  auto st = store.prepare(
      "SELECT id, package_id, version, published_at, deleted, deleted_at FROM versions WHERE superseded = 0 "
      "ORDER BY package_id, id");
  while (st.step()) {
    auto parsed = semver::try_parse_version(st.text_at(2));
    if (!parsed) continue;
    VersionRow r{st.int_at(0), st.int_at(1), *parsed, st.int_at(3), std::nullopt};
    if (st.int_at(4) != 0) r.deleted_at = st.opt_int_at(5).value_or(std::numeric_limits<std::int64_t>::min());
    out[r.package_id].push_back(std::move(r));
  }
  return out;
}

}  // namespace

DirectDepsReport materialize_direct_runtime_deps(MetadataStore& store) {
  DirectDepsReport report;
  store.transact([&] {
    store.exec("DELETE FROM metadata_analysis.version_direct_runtime_deps");
    store.exec("DELETE FROM metadata_analysis.direct_deps_skipped_names");
    store.exec(
        "INSERT OR IGNORE INTO metadata_analysis.version_direct_runtime_deps(v, depends_on_pkg) "
        "SELECT d.version_id, p.id FROM dependencies d "
        "JOIN versions v ON v.id = d.version_id AND v.superseded = 0 "
        "JOIN packages p ON p.name = d.depends_on_name "
        "WHERE d.kind = 'runtime'");
    store.exec(
        "INSERT INTO metadata_analysis.direct_deps_skipped_names(depends_on_name, edge_count) "
        "SELECT d.depends_on_name, count(*) FROM dependencies d "
        "JOIN versions v ON v.id = d.version_id AND v.superseded = 0 "
        "WHERE d.kind = 'runtime' AND NOT EXISTS (SELECT 1 FROM packages p WHERE p.name = d.depends_on_name) "
        "GROUP BY d.depends_on_name");
    report.edges = store.count("metadata_analysis.version_direct_runtime_deps");
    auto st = store.prepare("SELECT depends_on_name, edge_count FROM metadata_analysis.direct_deps_skipped_names");
    while (st.step()) report.skipped_names[st.text_at(0)] = st.int_at(1);
  });
  return report;
}

std::string AsOfPolicy::name() const {
  switch (kind) {
    case Kind::client_publish_time: return "publish";
    case Kind::latest: return "latest";
    case Kind::fixed: return at ? format_iso8601(*at) : "fixed";
  }
  return "publish";
}

AsOfPolicy AsOfPolicy::parse(std::string_view s) {
  if (s.empty() || s == "publish") return {};
  if (s == "latest") return {Kind::latest, std::nullopt};
  auto t = parse_iso8601(s);
  if (!t) throw Error(Errc::invalid_argument, "as-of must be 'publish', 'latest' or an ISO-8601 time");
  return {Kind::fixed, t};
}

ResolveReport resolve_edges(MetadataStore& store, const AsOfPolicy& policy, TimePoint now) {
  ResolveReport report;
  auto versions = load_versions(store);
  std::unordered_map<std::int64_t, const VersionRow*> by_id;
  for (const auto& [_, rows] : versions)
    for (const auto& r : rows) by_id[r.id] = &r;

  struct EdgeInput {
    std::int64_t v, pkg;
    std::string raw;
  };
  std::vector<EdgeInput> inputs;
  {
    std::lock_guard lock(store.mutex());
    auto st = store.prepare(
        "SELECT e.v, e.depends_on_pkg, d.constraint_raw FROM metadata_analysis.version_direct_runtime_deps e "
        "JOIN packages p ON p.id = e.depends_on_pkg "
        "JOIN dependencies d ON d.version_id = e.v AND d.depends_on_name = p.name AND d.kind = 'runtime' "
        "ORDER BY e.v, e.depends_on_pkg");
    while (st.step()) inputs.push_back({st.int_at(0), st.int_at(1), st.text_at(2)});
  }

  for (const auto& in : inputs) {
    auto dnf = semver::try_parse_constraint(in.raw);
    if (!dnf) {
      ++report.unparsed_constraints;
      continue;
    }
    std::int64_t as_of = to_epoch_ms(now);
    if (policy.kind == AsOfPolicy::Kind::fixed && policy.at) as_of = to_epoch_ms(*policy.at);
    if (policy.kind == AsOfPolicy::Kind::client_publish_time) {
      auto it = by_id.find(in.v);
      if (it == by_id.end()) continue;
      as_of = it->second->published_at;
    }
    std::optional<std::int64_t> best_id;
    const semver::Version* best = nullptr;
    if (auto it = versions.find(in.pkg); it != versions.end()) {
      for (const auto& cand : it->second) {
        if (cand.published_at > as_of) continue;
        if (cand.deleted_at && *cand.deleted_at <= as_of) continue;
        if (!semver::satisfies(cand.version, *dnf)) continue;
        if (!best || *best < cand.version) {
          best = &cand.version;
          best_id = cand.id;
        }
      }
    }
    report.edges.push_back({in.v, in.pkg, dnf->to_string(), best_id, from_epoch_ms(as_of)});
  }

  store.transact([&] {
    store.exec("DELETE FROM metadata_analysis.resolved_direct_runtime_deps");
    auto ins = store.prepare(
        "INSERT INTO metadata_analysis.resolved_direct_runtime_deps(v, depends_on_pkg, constraint_dnf, "
        "resolved_version_id, resolved_as_of, policy) VALUES (?1, ?2, ?3, ?4, ?5, ?6)");
    const auto policy_name = policy.name();
    for (const auto& e : report.edges) {
      ins.bind_all(e.v, e.depends_on_pkg, e.constraint_dnf, e.resolved_version_id, to_epoch_ms(e.resolved_as_of),
                   policy_name);
      ins.run();
      ins.reset();
    }
  });
  return report;
}

std::string_view update_kind_name(UpdateKind k) {
  switch (k) {
    case UpdateKind::major: return "major";
    case UpdateKind::minor: return "minor";
    case UpdateKind::patch: return "patch";
    case UpdateKind::prerelease: return "prerelease";
  }
  return "patch";
}

std::vector<UpdateRecord> compute_updates(MetadataStore& store, UpdateOptions options) {
  std::vector<UpdateRecord> out;
  auto versions = load_versions(store);
  std::vector<std::int64_t> packages;
  for (const auto& [pkg, _] : versions) packages.push_back(pkg);
  std::sort(packages.begin(), packages.end());

  for (auto pkg : packages) {
    std::vector<const VersionRow*> rows;
    for (const auto& r : versions[pkg])
      if (options.include_prereleases || !r.version.is_prerelease()) rows.push_back(&r);
    // Publish order, ties broken by semver so the scan is deterministic.
    std::sort(rows.begin(), rows.end(), [](const VersionRow* a, const VersionRow* b) {
      if (a->published_at != b->published_at) return a->published_at < b->published_at;
      return a->version < b->version;
    });
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& to = *rows[i];
      const VersionRow* from = nullptr;
      bool out_of_order = false;
      for (std::size_t j = 0; j < i && rows[j]->published_at < to.published_at; ++j) {
        const auto& earlier = *rows[j];
        if (earlier.version < to.version) {
          if (!from || from->version < earlier.version) from = &earlier;
        } else if (to.version < earlier.version) {
          out_of_order = true;
        }
      }
      if (!from) continue;
      UpdateKind kind = UpdateKind::prerelease;
      if (from->version.major != to.version.major) kind = UpdateKind::major;
      else if (from->version.minor != to.version.minor) kind = UpdateKind::minor;
      else if (from->version.patch != to.version.patch) kind = UpdateKind::patch;
      out.push_back({pkg, from->id, to.id, kind, out_of_order});
    }
  }

  store.transact([&] {
    store.exec("DELETE FROM metadata_analysis.updates");
    auto ins = store.prepare(
        "INSERT INTO metadata_analysis.updates(package_id, from_version_id, to_version_id, kind, out_of_order) "
        "VALUES (?1, ?2, ?3, ?4, ?5)");
    for (const auto& u : out) {
      ins.bind_all(u.package_id, u.from_version_id, u.to_version_id, update_kind_name(u.kind), u.out_of_order);
      ins.run();
      ins.reset();
    }
  });
  return out;
}

DependencyGraph transitive_closure(const std::vector<std::int64_t>& roots,
                                   const std::multimap<std::int64_t, std::int64_t>& adjacency) {
  DependencyGraph g;
  std::unordered_set<std::int64_t> seen;
  std::deque<std::int64_t> frontier;
  for (auto r : roots)
    if (seen.insert(r).second) {
      g.nodes.push_back(r);
      frontier.push_back(r);
    }
  while (!frontier.empty()) {
    auto n = frontier.front();
    frontier.pop_front();
    auto [lo, hi] = adjacency.equal_range(n);
    for (auto it = lo; it != hi; ++it) {
      g.edges.emplace_back(n, it->second);
      if (seen.insert(it->second).second) {
        g.nodes.push_back(it->second);
        frontier.push_back(it->second);
      }
    }
  }
  return g;
}

DependencyGraph transitive_graph(MetadataStore& store, const std::vector<std::int64_t>& roots) {
  std::multimap<std::int64_t, std::int64_t> adjacency;
  {
    std::lock_guard lock(store.mutex());
    auto st = store.prepare(
        "SELECT v, resolved_version_id FROM metadata_analysis.resolved_direct_runtime_deps "
        "WHERE resolved_version_id IS NOT NULL ORDER BY v, depends_on_pkg");
    while (st.step()) adjacency.emplace(st.int_at(0), st.int_at(1));
  }
  return transitive_closure(roots, adjacency);
}

VulnerabilityReport vulnerable_versions(MetadataStore& store) {
  VulnerabilityReport report;
  auto versions = load_versions(store);
  for (const auto& a : store.advisories()) {
    if (a.withdrawn) continue;
    std::vector<const semver::ConstraintDNF*> ranges;
    for (const auto& r : a.affected_ranges) {
      if (r.constraint) ranges.push_back(&*r.constraint);
      else report.unparsed_ranges.push_back(a.advisory_id + ": " + r.raw);
    }
    auto pkg = store.package_id(a.package_name);
    if (!pkg) {
      report.unknown_packages.push_back(a.advisory_id + ": " + a.package_name);
      continue;
    }
    for (const auto& v : versions[*pkg])
      if (std::any_of(ranges.begin(), ranges.end(), [&](auto* c) { return semver::satisfies(v.version, *c); }))
        report.rows.push_back({v.id, a.advisory_id});
  }
  std::sort(report.rows.begin(), report.rows.end());
  report.rows.erase(std::unique(report.rows.begin(), report.rows.end()), report.rows.end());

  store.transact([&] {
    store.exec("DELETE FROM metadata_analysis.vulnerable_versions");
    auto ins =
        store.prepare("INSERT INTO metadata_analysis.vulnerable_versions(version_id, advisory_id) VALUES (?1, ?2)");
    for (const auto& r : report.rows) {
      ins.bind_all(r.version_id, r.advisory_id);
      ins.run();
      ins.reset();
    }
  });
  return report;
}

const char* const kImpactQuery = R"sql(
SELECT DISTINCT client.id AS client_version_id,
       client_p.name AS client_package,
       client.version AS client_version,
       vuln_p.name AS vulnerable_package,
       (SELECT t.blob_key FROM downloaded_tarballs t JOIN versions tv ON tv.id = t.version_id
         WHERE tv.package_id = client.package_id AND tv.version = client.version
         ORDER BY t.downloaded_at DESC LIMIT 1) AS blob_key
  FROM packages vuln_p
  JOIN vulnerabilities vuln ON vuln_p.name = vuln.package_name AND vuln.withdrawn = 0
  LEFT JOIN download_metrics m ON m.package_id = vuln_p.id
  JOIN metadata_analysis.version_direct_runtime_deps edge ON edge.depends_on_pkg = vuln_p.id
  JOIN versions client ON client.id = edge.v
  JOIN packages client_p ON client_p.id = client.package_id
 WHERE (?1 IS NULL OR json_extract(m.download_counts, '$[#-1].counter') > ?1)
   AND (?2 = 0 OR json_extract(client.extra_metadata, '$.scripts.test') IS NOT NULL)
 ORDER BY client_p.name, client.id, vuln_p.name
)sql";

std::vector<ImpactCandidate> impact_candidates(MetadataStore& store, const ImpactOptions& options) {
  std::vector<ImpactCandidate> out;
  store.transact([&] {
    auto st = store.prepare(kImpactQuery);
    st.bind(1, options.min_weekly_downloads).bind(2, options.require_test_script);
    while (st.step())
      out.push_back({st.int_at(0), st.text_at(1), st.text_at(2), st.text_at(3), st.opt_text_at(4)});
    store.exec("DELETE FROM metadata_analysis.impact_candidates");
    auto ins = store.prepare(
        "INSERT INTO metadata_analysis.impact_candidates(client_version_id, client_package, client_version, "
        "vulnerable_package, blob_key) VALUES (?1, ?2, ?3, ?4, ?5)");
    for (const auto& c : out) {
      ins.bind_all(c.client_version_id, c.client_package, c.client_version, c.vulnerable_package, c.blob_key);
      ins.run();
      ins.reset();
    }
  });
  return out;
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void write_csv(std::ostream& out, const QueryResult& table) {
  for (std::size_t i = 0; i < table.columns.size(); ++i) out << (i ? "," : "") << csv_escape(table.columns[i]);
  out << "\r\n";
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << (row[i] ? csv_escape(*row[i]) : "");
    out << "\r\n";
  }
}

}  // namespace follower
