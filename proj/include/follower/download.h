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

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "follower/blob_store.h"
#include "follower/clock.h"
#include "follower/http.h"
#include "follower/store.h"

namespace follower {

enum class JobState { queued, leased, done, missing, failed };
std::string_view state_name(JobState s);
JobState parse_state(std::string_view s);
inline bool is_terminal(JobState s) { return s == JobState::done || s == JobState::missing || s == JobState::failed; }

struct DownloadJob {
  std::int64_t job_id = 0;
  std::string blob_key;
  std::optional<std::int64_t> version_id;
  std::string url;
  TimePoint enqueued_at;
  int attempts = 0;
  JobState state = JobState::queued;
  std::optional<std::string> lease_worker;
  std::optional<TimePoint> lease_expiry;
  TimePoint next_attempt_at;
  std::optional<TimePoint> completed_at;
  std::optional<int> last_status;
};

struct RetryPolicy {
  int max_attempts = 8;
  Millis backoff_base = std::chrono::seconds{2};
  Millis backoff_cap = std::chrono::hours{1};
  Millis lease = std::chrono::minutes{5};

  /// Delay before the retry that follows `attempts` failed attempts:
  /// base * 2^(attempts-1), capped.
  Millis backoff(int attempts) const;
};

struct LatencyReport {
  std::size_t count = 0;
  Millis p50{0};
  Millis p99{0};
  Millis sla{0};
  std::size_t within_sla = 0;
  double fraction_within = 0;
};

/// Nearest-rank percentiles and the fraction of latencies <= sla.
LatencyReport summarize_latencies(std::vector<Millis> latencies, Millis sla);

/// Tarball download queue persisted in the metadata store.
class DownloadQueue {
 public:
  DownloadQueue(MetadataStore& store, Clock& clock, RetryPolicy policy = {});

  struct EnqueueResult {
    std::int64_t job_id = 0;
    bool created = false;
    JobState state = JobState::queued;
  };
  /// Idempotent per blob key.
  EnqueueResult enqueue(const std::string& blob_key, const std::string& url,
                        std::optional<std::int64_t> version_id = std::nullopt);

  /// Atomically leases up to n of the oldest eligible jobs: queued jobs whose
  /// backoff has elapsed, and leased jobs whose lease expired.
  std::vector<DownloadJob> claim(const std::string& worker_id, int n);
  bool renew(std::int64_t job_id, const std::string& worker_id);

  /// Runs one attempt of a leased job: 200 streams the body into the blob
  /// store (done), 404 records missing, anything else schedules a retry or
  /// fails the job once max_attempts is reached.
  JobState execute(const DownloadJob& job, const std::string& worker_id, HttpClient& http, BlobIndex& blobs,
                   const std::filesystem::path& blob_root);

  std::optional<DownloadJob> job(std::int64_t job_id);
  std::optional<DownloadJob> job_by_key(const std::string& blob_key);
  std::vector<DownloadJob> jobs();
  std::int64_t pending();  // queued + leased
  /// Earliest time a non-terminal job becomes claimable.
  std::optional<TimePoint> next_due();

  LatencyReport latency_report(Millis sla);

  const RetryPolicy& policy() const { return policy_; }

 private:
  bool finish(const DownloadJob& job, const std::string& worker_id, JobState state, std::optional<int> status,
              const std::string& error, std::optional<TimePoint> next_attempt);

  MetadataStore& store_;
  Clock& clock_;
  RetryPolicy policy_;
};

/// Claims and executes jobs until the queue has nothing claimable.
/// Returns the number of attempts executed.
std::size_t drain_queue(DownloadQueue& queue, const std::string& worker_id, HttpClient& http, BlobIndex& blobs,
                        const std::filesystem::path& blob_root, int batch = 16);

/// Runs `count` worker threads against the queue until `stop` is set.
void run_workers(DownloadQueue& queue, int count, HttpClient& http, BlobIndex& blobs,
                 const std::filesystem::path& blob_root, Clock& clock, const std::atomic<bool>& stop,
                 bool exit_when_idle = false);

}  // namespace follower
