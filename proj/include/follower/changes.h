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
#include "follower/http.h"
#include "follower/model.h"
#include "follower/store.h"
#include "json.hpp"

namespace follower {

class DownloadQueue;

inline constexpr const char* kStartCursor = "0";

struct ChangeEvent {
  std::string seq;
  std::string package_name;
  bool deleted = false;
  std::optional<nlohmann::json> doc;  // present iff !deleted
};

struct ChangesPage {
  std::vector<ChangeEvent> events;
  std::string next_cursor;
};

/// Bounded polls over a CouchDB-style changes feed.
class ChangesFeed {
 public:
  virtual ~ChangesFeed() = default;
  /// Throws feed_unavailable (retry with the same cursor) or cursor_expired.
  virtual ChangesPage poll(const std::string& cursor, int limit) = 0;
};

/// GET {base}/_changes?since=<seq>&limit=<n>&include_docs=true
class HttpChangesFeed final : public ChangesFeed {
 public:
  HttpChangesFeed(HttpClient& http, std::string base_url) : http_(http), base_(std::move(base_url)) {}
  ChangesPage poll(const std::string& cursor, int limit) override;

 private:
  HttpClient& http_;
  std::string base_;
};

/// Decodes a `_changes` response body. Throws invalid_doc.
ChangesPage parse_changes_page(const std::string& body, const std::string& cursor);

/// Interprets one entry of a package document's "versions" map. `time` is
/// the document's time map (may be null). Throws invalid_doc or
/// malformed_version.
VersionManifest parse_manifest(const std::string& package_name, const std::string& version_key,
                               const nlohmann::json& manifest, const nlohmann::json& time);

std::optional<RepositoryInfo> parse_repository(const nlohmann::json& repository);

struct NormalizedUpdate {
  std::string package_name;
  std::vector<VersionManifest> new_versions;  // includes republished versions
  std::vector<std::string> removed_versions;
  bool package_deleted = false;
  bool package_undeleted = false;
  bool unchanged = false;
};

/// Diffs an event against the stored state. Throws invalid_doc.
NormalizedUpdate normalize(const ChangeEvent& event, const std::optional<PackageState>& known);

struct ApplySummary {
  int versions_inserted = 0;
  int versions_superseded = 0;
  int versions_flagged = 0;
  int dependency_rows = 0;
  int jobs_enqueued = 0;
  bool package_flag_changed = false;

  int writes() const {
    return versions_inserted + versions_flagged + dependency_rows + jobs_enqueued + (package_flag_changed ? 1 : 0);
  }
};

/// Writes an update and the feed cursor in one transaction. `queue` may be
/// null when tarballs are not archived.
ApplySummary apply(MetadataStore& store, DownloadQueue* queue, const NormalizedUpdate& update, TimePoint now,
                   const std::string& feed, const std::string& seq);

struct IngestStats {
  std::int64_t events = 0;
  std::int64_t dead_letters = 0;
  std::int64_t resyncs = 0;
  ApplySummary totals;
};

/// Single consumer of one feed: poll, normalize, apply, persist cursor.
class Ingestor {
 public:
  Ingestor(MetadataStore& store, ChangesFeed& feed, DownloadQueue* queue, Clock& clock,
           std::string feed_name = "registry", std::string start_cursor = kStartCursor);

  /// Processes one page. Returns the number of events consumed; 0 means
  /// the feed is drained. Propagates feed_unavailable.
  std::size_t step(int limit = 100);
  /// Steps until a poll returns no events.
  void run_until_drained(int limit = 100);

  std::string cursor();
  const IngestStats& stats() const { return stats_; }

 private:
  void handle(const ChangeEvent& e);

  MetadataStore& store_;
  ChangesFeed& feed_;
  DownloadQueue* queue_;
  Clock& clock_;
  std::string feed_name_;
  std::string start_cursor_;
  IngestStats stats_;
};

}  // namespace follower
