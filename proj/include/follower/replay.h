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
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "follower/blob_store.h"
#include "follower/changes.h"
#include "follower/clock.h"
#include "follower/download.h"
#include "follower/http.h"
#include "follower/scrapers.h"
#include "follower/store.h"
#include "json.hpp"

namespace follower {

// Scenario format: see docs/scenario-format.md.

struct ScenarioEvent {
  Millis at{0};  // offset from scenario start
  std::string type;
  nlohmann::json body;  // the raw event object
};

struct Scenario {
  std::string name;
  TimePoint start;
  std::string registry = "http://registry.test";
  std::optional<RateBudget> metrics_budget;
  std::vector<ScenarioEvent> events;

  TimePoint end() const { return events.empty() ? start : start + events.back().at; }
};

/// Validates and loads a scenario. Throws scenario_invalid.
Scenario parse_scenario(const nlohmann::json& doc);
Scenario load_scenario(const std::filesystem::path& path);

/// Deterministic tarball bytes for a publish event.
std::string scenario_tarball_bytes(const std::string& package, const std::string& version,
                                   const nlohmann::json& publish_event);
/// The tarball URL the mock registry advertises for a version.
std::string scenario_tarball_url(const std::string& registry, const std::string& package, const std::string& version);

/// In-process mock registry. Scenario events become visible when the clock
/// reaches them. Serves:
///   GET /_changes?since=&limit=&include_docs=true
///   GET /<package>/-/<file>.tgz
///   GET /downloads/point/last-week/<names>
///   GET /advisories?since=
class MockRegistry final : public HttpClient {
 public:
  MockRegistry(const Scenario& scenario, Clock& clock);

  HttpResponse get(const std::string& url) override;
  /// Path plus query.
  HttpResponse handle(const std::string& target);

  /// Applies every event whose time has come. Called by every request.
  void sync();
  /// Base URL written into tarball URLs (the HTTP server overrides it).
  void set_base_url(std::string base);

  std::vector<TimePoint> metrics_requests();
  /// Requests that exceeded the scenario's metrics budget in some window.
  std::size_t budget_violations();
  std::size_t requests_served();
  std::int64_t last_seq();

  /// Writes every visible advisory document into `dir` as <id>.json.
  void write_advisories(const std::filesystem::path& dir);

 private:
  struct VersionEntry {
    std::string version;
    nlohmann::json manifest;
    TimePoint published_at;
    std::int64_t added_at = 0;    // change seq
    std::int64_t removed_at = -1; // change seq that dropped it from the doc; -1 while listed
    bool tarball_gone = false;
    Millis tarball_delay{0};
    std::string bytes;
    std::string integrity;
  };
  struct PackageHistory {
    std::vector<VersionEntry> versions;
    bool deleted = false;
    std::optional<TimePoint> created;
  };
  struct Change {
    std::int64_t seq;
    std::string package;
    bool deleted;
    std::optional<nlohmann::json> raw;  // scripted document served verbatim
  };
  struct Fault {
    std::string endpoint;
    std::optional<std::string> package;
    std::optional<std::string> version;
    int status = 503;
    int remaining = 1;
  };

  void apply_locked(const ScenarioEvent& e);
  nlohmann::json render_doc_locked(const std::string& package, std::int64_t seq);
  std::optional<int> take_fault_locked(std::string_view endpoint, const std::string& package,
                                       const std::string& version);
  HttpResponse changes_locked(std::string_view query);
  HttpResponse metrics_locked(std::string_view names);
  HttpResponse advisories_locked(std::string_view query);

  const Scenario& scenario_;
  Clock& clock_;
  std::mutex mu_;
  std::string base_;
  std::size_t next_event_ = 0;
  std::int64_t seq_ = 0;
  std::map<std::string, PackageHistory> packages_;
  std::vector<Change> changes_;
  std::vector<Fault> faults_;
  std::map<std::string, std::pair<std::string, std::int64_t>> metrics_;  // package -> (week_start, downloads)
  std::map<std::string, nlohmann::json> advisories_;
  std::vector<TimePoint> metrics_requests_;
  std::size_t violations_ = 0;
  std::size_t served_ = 0;
};

/// Serves a MockRegistry over HTTP on 127.0.0.1.
class ReplayServer {
 public:
  ReplayServer(MockRegistry& registry, int port = 0);
  ~ReplayServer();
  int port() const { return port_; }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  /// Blocks until stop() is called.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

// -- oracle ------------------------------------------------------------------------
// Computed by direct interpretation of the script, assuming the pipeline
// ingests after every event.

struct ExpectedVersionRow {
  std::string package;
  std::string version;
  int generation = 0;
  bool deleted = false;
  bool superseded = false;
  bool has_test_script = false;
  std::set<std::string> runtime_deps;
};

struct ScenarioOracle {
  std::vector<ExpectedVersionRow> rows;
  std::set<std::string> deleted_packages;
  /// (package, version) -> expected tarball bytes, for tarballs that should be archived.
  std::map<std::pair<std::string, std::string>, std::string> blobs;
  /// package -> latest scripted weekly downloads
  std::map<std::string, std::int64_t> latest_downloads;
  /// package names with a live (not withdrawn) advisory
  std::set<std::string> advised_packages;

  std::size_t deleted_rows() const;
  /// (client package, client version, vulnerable package)
  std::set<std::tuple<std::string, std::string, std::string>> impact(std::optional<std::int64_t> min_downloads,
                                                                      bool require_tests) const;
};

ScenarioOracle oracle(const Scenario& scenario, int max_attempts = RetryPolicy{}.max_attempts);

// -- simulation driver ---------------------------------------------------------------

struct SimulationOptions {
  std::string store_path = ":memory:";
  std::filesystem::path blob_root;
  std::uint64_t segment_size = std::uint64_t{1} << 30;
  RetryPolicy retry;
  bool archive_tarballs = true;
  bool sweep_metrics = false;
  bool sync_advisories = false;
  int poll_limit = 100;
};

/// The full pipeline against a MockRegistry on a simulated clock:
/// for each scenario instant, advance the clock, ingest until drained and
/// run due downloads; afterwards run remaining retries to completion.
class Simulation {
 public:
  Simulation(const Scenario& scenario, SimulationOptions options);
  ~Simulation();

  void run();

  SimulatedClock& clock() { return clock_; }
  MockRegistry& registry() { return *registry_; }
  MetadataStore& store() { return *store_; }
  BlobManager& blobs() { return *blobs_; }
  DownloadQueue& queue() { return *queue_; }
  Ingestor& ingestor() { return *ingestor_; }
  const std::optional<SweepReport>& sweep() const { return sweep_; }

 private:
  void ingest();
  void download();

  const Scenario& scenario_;
  SimulationOptions opts_;
  SimulatedClock clock_;
  std::unique_ptr<MockRegistry> registry_;
  std::unique_ptr<MetadataStore> store_;
  std::unique_ptr<BlobManager> blobs_;
  std::unique_ptr<DownloadQueue> queue_;
  std::unique_ptr<HttpChangesFeed> feed_;
  std::unique_ptr<Ingestor> ingestor_;
  std::optional<SweepReport> sweep_;
};

}  // namespace follower
