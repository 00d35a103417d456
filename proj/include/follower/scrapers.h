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
#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "follower/clock.h"
#include "follower/http.h"
#include "follower/model.h"
#include "follower/store.h"
#include "json.hpp"

namespace follower {

struct RateBudget {
  int requests_per_interval = 1;
  Millis interval = std::chrono::minutes{1};
  int batch_size = 128;

  void validate() const;
};

struct SweepPlan {
  std::vector<std::vector<std::string>> batches;
  TimePoint started_at;
  TimePoint estimated_completion;

  std::size_t package_count() const;
};

/// Sorted by name; names containing '/' get a batch of their own.
/// estimated_completion = start + ceil(batches / rpi) * interval.
SweepPlan plan_sweep(std::vector<std::string> packages, const RateBudget& budget, TimePoint start);

/// Paces requests so that no window [t, t + interval) ever holds more than
/// requests_per_interval of them.
class SlidingWindowPacer {
 public:
  SlidingWindowPacer(Clock& clock, int requests_per_interval, Millis interval)
      : clock_(clock), limit_(requests_per_interval), interval_(interval) {}

  /// Blocks (on the clock) until a request may be sent, then records it.
  TimePoint acquire();
  /// Blocks until the last recorded request leaves the window.
  TimePoint drain();
  std::size_t sent() const { return sent_; }

 private:
  Clock& clock_;
  int limit_;
  Millis interval_;
  std::deque<TimePoint> window_;
  std::size_t sent_ = 0;
};

struct MetricsBatchResult {
  std::vector<std::pair<std::string, MetricPoint>> points;  // every point the API returned
  int appended = 0;
  std::vector<std::string> failed;  // members with no data
};

struct SweepReport {
  std::int64_t sweep_id = 0;
  TimePoint started_at;
  TimePoint finished_at;
  TimePoint estimated_completion;
  std::size_t packages = 0;
  std::size_t batches = 0;
  std::size_t requests = 0;
  std::size_t points_appended = 0;
  std::size_t failures = 0;
  std::size_t rate_limited = 0;
  std::size_t upstream_errors = 0;
};

/// Weekly download counts from a point API:
/// GET {base}/downloads/point/last-week/<name>[,<name>...]
class MetricsScraper {
 public:
  MetricsScraper(MetadataStore& store, HttpClient& http, Clock& clock, std::string base_url, RateBudget budget);

  /// One request. Throws rate_limited (nothing written) or upstream_error.
  MetricsBatchResult fetch_batch(const std::vector<std::string>& batch, std::int64_t sweep_id);

  /// One full pass over all live packages, resuming an interrupted sweep
  /// from its persisted progress cursor.
  SweepReport sweep();

  int max_retries = 5;

 private:
  MetadataStore& store_;
  HttpClient& http_;
  Clock& clock_;
  std::string base_;
  RateBudget budget_;
};

/// OSV subset: {id, modified, withdrawn, affected[{package{ecosystem,name},
/// ranges[{type, events[{introduced|fixed|last_affected}]}], versions[]}],
/// database_specific{severity, cwe_ids}}. One Advisory per affected npm
/// package. Throws invalid_doc.
std::vector<Advisory> parse_osv(const nlohmann::json& doc);

/// Affected ranges of one OSV range object as range-expression strings.
std::vector<std::string> osv_events_to_ranges(const nlohmann::json& events);

struct AdvisorySyncReport {
  std::size_t documents = 0;
  std::size_t advisories = 0;
  std::size_t withdrawn = 0;
  std::size_t unparsed_ranges = 0;
  std::size_t rejected = 0;
  std::optional<std::string> cursor;
};

/// Reads OSV documents from a directory of *.json files or from
/// GET {base}/advisories?since=<iso8601> (a JSON array).
class AdvisoryScraper {
 public:
  AdvisoryScraper(MetadataStore& store, std::filesystem::path directory);
  AdvisoryScraper(MetadataStore& store, HttpClient& http, std::string base_url);

  /// Throws upstream_error; the cursor only advances after a full pass.
  AdvisorySyncReport sync();

 private:
  std::vector<nlohmann::json> fetch(const std::optional<std::string>& since);

  MetadataStore& store_;
  HttpClient* http_ = nullptr;
  std::string base_;
  std::filesystem::path directory_;
};

}  // namespace follower
