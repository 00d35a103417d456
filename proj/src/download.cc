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

#include "follower/download.h"

#include <algorithm>
#include <cmath>
#include <thread>

#include <unistd.h>

#include "follower/errors.h"
#include "follower/json_log.h"

namespace follower {

namespace {

constexpr const char* kJobColumns =
    "job_id, blob_key, version_id, url, enqueued_at, attempts, state, lease_worker, lease_expiry, "
    "next_attempt_at, completed_at, last_status";

std::optional<TimePoint> opt_time(const Statement& st, int col) {
  if (auto v = st.opt_int_at(col)) return from_epoch_ms(*v);
  return std::nullopt;
}

DownloadJob read_job(const Statement& st) {
  DownloadJob j;
  j.job_id = st.int_at(0);
  j.blob_key = st.text_at(1);
  j.version_id = st.opt_int_at(2);
  j.url = st.text_at(3);
  j.enqueued_at = from_epoch_ms(st.int_at(4));
  j.attempts = int(st.int_at(5));
  j.state = parse_state(st.text_at(6));
  j.lease_worker = st.opt_text_at(7);
  j.lease_expiry = opt_time(st, 8);
  j.next_attempt_at = from_epoch_ms(st.int_at(9));
  j.completed_at = opt_time(st, 10);
  if (auto s = st.opt_int_at(11)) j.last_status = int(*s);
  return j;
}

}  // namespace

std::string_view state_name(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::leased: return "leased";
    case JobState::done: return "done";
    case JobState::missing: return "missing";
    case JobState::failed: return "failed";
  }
  return "queued";
}

JobState parse_state(std::string_view s) {
  for (auto st : {JobState::queued, JobState::leased, JobState::done, JobState::missing, JobState::failed})
    if (state_name(st) == s) return st;
  throw Error(Errc::corruption, "unknown job state '" + std::string(s) + "'");
}

Millis RetryPolicy::backoff(int attempts) const {
  if (attempts < 1) attempts = 1;
  // 2^62 overflows Millis long before the cap matters; stop doubling early.
  Millis d = backoff_base;
  for (int i = 1; i < attempts && d < backoff_cap; ++i) d *= 2;
  return std::min(d, backoff_cap);
}

LatencyReport summarize_latencies(std::vector<Millis> latencies, Millis sla) {
  LatencyReport r;
  r.sla = sla;
  r.count = latencies.size();
  if (latencies.empty()) return r;
  std::sort(latencies.begin(), latencies.end());
  auto rank = [&](double p) {
    auto k = std::size_t(std::ceil(p / 100.0 * double(latencies.size())));
    return latencies[std::clamp<std::size_t>(k, 1, latencies.size()) - 1];
  };
  r.p50 = rank(50);
  r.p99 = rank(99);
  r.within_sla = std::size_t(std::upper_bound(latencies.begin(), latencies.end(), sla) - latencies.begin());
  r.fraction_within = double(r.within_sla) / double(r.count);
  return r;
}

DownloadQueue::DownloadQueue(MetadataStore& store, Clock& clock, RetryPolicy policy)
    : store_(store), clock_(clock), policy_(policy) {}

DownloadQueue::EnqueueResult DownloadQueue::enqueue(const std::string& blob_key, const std::string& url,
                                                    std::optional<std::int64_t> version_id) {
  return store_.transact([&] {
    EnqueueResult r;
    auto existing = store_.prepare("SELECT job_id, state FROM download_jobs WHERE blob_key = ?1");
    existing.bind(1, blob_key);
    if (existing.step()) {
      r.job_id = existing.int_at(0);
      r.state = parse_state(existing.text_at(1));
      return r;
    }
    const auto now = to_epoch_ms(clock_.now());
    auto ins = store_.prepare(
        "INSERT INTO download_jobs(blob_key, version_id, url, enqueued_at, state, next_attempt_at) "
        "VALUES (?1, ?2, ?3, ?4, 'queued', ?4) RETURNING job_id");
    ins.bind_all(blob_key, version_id, url, now);
    ins.step();
    r.job_id = ins.int_at(0);
    r.created = true;
    return r;
  });
}

std::vector<DownloadJob> DownloadQueue::claim(const std::string& worker_id, int n) {
  return store_.transact([&] {
    const auto now = to_epoch_ms(clock_.now());
    std::vector<DownloadJob> out;
    auto sel = store_.prepare(std::string("SELECT ") + kJobColumns +
                              " FROM download_jobs WHERE (state = 'queued' AND next_attempt_at <= ?1) "
                              "OR (state = 'leased' AND lease_expiry <= ?1) ORDER BY enqueued_at, job_id LIMIT ?2");
    sel.bind_all(now, n);
    while (sel.step()) out.push_back(read_job(sel));
    auto lease = store_.prepare(
        "UPDATE download_jobs SET state = 'leased', lease_worker = ?2, lease_expiry = ?3 WHERE job_id = ?1");
    const auto expiry = now + policy_.lease.count();
    for (auto& j : out) {
      lease.bind_all(j.job_id, worker_id, expiry);
      lease.run();
      lease.reset();
      j.state = JobState::leased;
      j.lease_worker = worker_id;
      j.lease_expiry = from_epoch_ms(expiry);
    }
    return out;
  });
}

bool DownloadQueue::renew(std::int64_t job_id, const std::string& worker_id) {
  return store_.transact([&] {
    const auto now = to_epoch_ms(clock_.now());
    auto up = store_.prepare(
        "UPDATE download_jobs SET lease_expiry = ?3 WHERE job_id = ?1 AND state = 'leased' AND lease_worker = ?2 "
        "AND lease_expiry > ?4 RETURNING job_id");
    up.bind_all(job_id, worker_id, now + policy_.lease.count(), now);
    return up.step();
  });
}

bool DownloadQueue::finish(const DownloadJob& job, const std::string& worker_id, JobState state,
                           std::optional<int> status, const std::string& error,
                           std::optional<TimePoint> next_attempt) {
  return store_.transact([&] {
    const auto now = clock_.now();
    auto up = store_.prepare(
        "UPDATE download_jobs SET state = ?3, lease_worker = NULL, lease_expiry = NULL, last_status = ?4, "
        "last_error = ?5, completed_at = ?6, next_attempt_at = COALESCE(?7, next_attempt_at) "
        "WHERE job_id = ?1 AND state = 'leased' AND lease_worker = ?2 RETURNING job_id");
    std::optional<std::int64_t> completed;
    if (is_terminal(state)) completed = to_epoch_ms(now);
    std::optional<std::int64_t> next;
    if (next_attempt) next = to_epoch_ms(*next_attempt);
    std::optional<std::string> err;
    if (!error.empty()) err = error;
    up.bind_all(job.job_id, worker_id, state_name(state), status, err, completed, next);
    return up.step();
  });
}

JobState DownloadQueue::execute(const DownloadJob& job, const std::string& worker_id, HttpClient& http,
                                BlobIndex& blobs, const std::filesystem::path& blob_root) {
  int attempts = 0;
  bool held = store_.transact([&] {
    auto up = store_.prepare(
        "UPDATE download_jobs SET attempts = attempts + 1 WHERE job_id = ?1 AND state = 'leased' "
        "AND lease_worker = ?2 RETURNING attempts");
    up.bind_all(job.job_id, worker_id);
    if (!up.step()) return false;
    attempts = int(up.int_at(0));
    return true;
  });
  if (!held) {
    auto cur = this->job(job.job_id);
    return cur ? cur->state : JobState::failed;
  }

  auto resp = http.get(job.url);
  std::string error;
  if (resp.status == 200) {
    try {
      auto loc = store_blob(blobs, blob_root, job.blob_key, resp.body);
      store_.transact([&] {
        auto ins = store_.prepare(
            "INSERT OR IGNORE INTO downloaded_tarballs(blob_key, version_id, num_bytes, checksum, downloaded_at) "
            "VALUES (?1, ?2, ?3, ?4, ?5)");
        ins.bind_all(job.blob_key, job.version_id, std::int64_t(loc.num_bytes), loc.checksum,
                     to_epoch_ms(clock_.now()));
        ins.run();
        finish(job, worker_id, JobState::done, resp.status, "", std::nullopt);
      });
      log_event(LogLevel::debug, "download.done",
                {{"job", job.job_id}, {"key", job.blob_key}, {"bytes", loc.num_bytes}, {"attempts", attempts}});
      return JobState::done;
    } catch (const Error& e) {
      error = std::string(errc_name(e.code())) + ": " + e.what();
    }
  } else if (resp.status == 404) {
    finish(job, worker_id, JobState::missing, resp.status, "not found upstream", std::nullopt);
    log_event(LogLevel::info, "download.missing", {{"job", job.job_id}, {"key", job.blob_key}});
    return JobState::missing;
  } else {
    error = resp.status == 0 ? "connection failed" : "HTTP " + std::to_string(resp.status);
  }

  std::optional<int> status;
  if (resp.status != 0) status = resp.status;
  if (attempts >= policy_.max_attempts) {
    finish(job, worker_id, JobState::failed, status, error, std::nullopt);
    log_event(LogLevel::warn, "download.failed", {{"job", job.job_id}, {"key", job.blob_key}, {"error", error}});
    return JobState::failed;
  }
  auto next = clock_.now() + policy_.backoff(attempts);
  finish(job, worker_id, JobState::queued, status, error, next);
  log_event(LogLevel::debug, "download.retry",
            {{"job", job.job_id}, {"attempts", attempts}, {"next_attempt_at", format_iso8601(next)}, {"error", error}});
  return JobState::queued;
}

std::optional<DownloadJob> DownloadQueue::job(std::int64_t job_id) {
  std::lock_guard lock(store_.mutex());
  auto st = store_.prepare(std::string("SELECT ") + kJobColumns + " FROM download_jobs WHERE job_id = ?1");
  st.bind(1, job_id);
  if (!st.step()) return std::nullopt;
  return read_job(st);
}

std::optional<DownloadJob> DownloadQueue::job_by_key(const std::string& blob_key) {
  std::lock_guard lock(store_.mutex());
  auto st = store_.prepare(std::string("SELECT ") + kJobColumns + " FROM download_jobs WHERE blob_key = ?1");
  st.bind(1, blob_key);
  if (!st.step()) return std::nullopt;
  return read_job(st);
}

std::vector<DownloadJob> DownloadQueue::jobs() {
  std::lock_guard lock(store_.mutex());
  auto st = store_.prepare(std::string("SELECT ") + kJobColumns + " FROM download_jobs ORDER BY job_id");
  std::vector<DownloadJob> out;
  while (st.step()) out.push_back(read_job(st));
  return out;
}

std::int64_t DownloadQueue::pending() { return store_.count("download_jobs", "state IN ('queued', 'leased')"); }

std::optional<TimePoint> DownloadQueue::next_due() {
  std::lock_guard lock(store_.mutex());
  auto st = store_.prepare(
      "SELECT MIN(CASE state WHEN 'queued' THEN next_attempt_at ELSE lease_expiry END) FROM download_jobs "
      "WHERE state IN ('queued', 'leased')");
  if (!st.step() || st.is_null(0)) return std::nullopt;
  return from_epoch_ms(st.int_at(0));
}

LatencyReport DownloadQueue::latency_report(Millis sla) {
  std::vector<Millis> latencies;
  {
    std::lock_guard lock(store_.mutex());
    auto st = store_.prepare("SELECT completed_at - enqueued_at FROM download_jobs WHERE state = 'done'");
    while (st.step()) latencies.emplace_back(st.int_at(0));
  }
  return summarize_latencies(std::move(latencies), sla);
}

std::size_t drain_queue(DownloadQueue& queue, const std::string& worker_id, HttpClient& http, BlobIndex& blobs,
                        const std::filesystem::path& blob_root, int batch) {
  std::size_t executed = 0;
  for (;;) {
    auto jobs = queue.claim(worker_id, batch);
    if (jobs.empty()) return executed;
    for (const auto& j : jobs) {
      queue.execute(j, worker_id, http, blobs, blob_root);
      ++executed;
    }
  }
}

void run_workers(DownloadQueue& queue, int count, HttpClient& http, BlobIndex& blobs,
                 const std::filesystem::path& blob_root, Clock& clock, const std::atomic<bool>& stop,
                 bool exit_when_idle) {
  std::vector<std::thread> threads;
  for (int i = 0; i < count; ++i) {
    threads.emplace_back([&, i] {
      const std::string worker_id = "worker-" + std::to_string(::getpid()) + "-" + std::to_string(i);
      while (!stop) {
        std::size_t done = 0;
        try {
          done = drain_queue(queue, worker_id, http, blobs, blob_root, 1);
        } catch (const Error& e) {
          log_event(LogLevel::error, "worker.error", {{"worker", worker_id}, {"error", errc_name(e.code())},
                                                      {"message", e.what()}});
        }
        if (done > 0) continue;
        if (exit_when_idle && queue.pending() == 0) break;
        auto pause = Millis{1000};
        if (auto due = queue.next_due()) pause = std::clamp(*due - clock.now(), Millis{10}, pause);
        clock.sleep_for(pause);
      }
    });
  }
  for (auto& t : threads) t.join();
}

}  // namespace follower
