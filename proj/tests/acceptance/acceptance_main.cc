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

// End-to-end acceptance suite. Each criterion prints one PASS/FAIL line; the
// exit status is non-zero if any criterion fails. Pass criterion numbers as
// arguments to run a subset.

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "blob_recount.h"
#include "follower/analyses.h"
#include "follower/blob_store.h"
#include "follower/cli.h"
#include "follower/errors.h"
#include "follower/json_log.h"
#include "follower/manager_protocol.h"
#include "follower/replay.h"
#include "follower/semver.h"
#include "semver_oracle.h"
#include "support.h"
#include "updates_oracle.h"

using namespace follower;
using namespace std::chrono_literals;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Collects failed expectations; the first few are reported.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    ++failures_;
    if (first_.size() < 3) first_.push_back(what);
  }
  int failures() const { return failures_; }
  Outcome outcome(const std::string& summary) const {
    if (failures_ == 0) return {true, summary};
    std::string d = summary + "; " + std::to_string(failures_) + " failed check(s): ";
    for (std::size_t i = 0; i < first_.size(); ++i) d += (i ? " | " : "") + first_[i];
    return {false, d};
  }

 private:
  int failures_ = 0;
  std::vector<std::string> first_;
};

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "follower");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(int(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string tsv_field(const std::string& line, std::size_t index) {
  std::istringstream in(line);
  std::string f;
  for (std::size_t i = 0; i <= index; ++i)
    if (!std::getline(in, f, '\t')) return "";
  return f;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string ms(Millis d) { return std::to_string(d.count()) + "ms"; }

json scenario_json(const std::string& name, std::vector<json> events, json extra = json::object()) {
  json doc = testing::scenario_doc(std::move(events), name);
  doc.update(extra);
  return doc;
}

BlobManager::Options quiet_blob_options(const std::filesystem::path& root) {
  BlobManager::Options o;
  o.root = root;
  o.fsync = false;
  return o;
}

bool non_overlapping(const std::map<std::string, BlobLocation>& entries) {
  std::map<std::string, std::vector<std::pair<std::uint64_t, std::uint64_t>>> by_file;
  for (const auto& [_, loc] : entries) by_file[loc.file_name].emplace_back(loc.byte_offset, loc.byte_offset + loc.num_bytes);
  for (auto& [_, ranges] : by_file) {
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i)
      if (ranges[i - 1].second > ranges[i].first) return false;
  }
  return true;
}

// -- 1 -------------------------------------------------------------------------

Outcome semver_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  Checks c;
  std::mt19937_64 rng(20220712);
  std::vector<std::string> pool;
  for (int i = 0; i < 48; ++i) pool.push_back(oracle::random_version(rng));
  std::vector<semver::Version> parsed;
  for (const auto& v : pool) parsed.push_back(semver::parse_version(v));

  std::size_t pairs = 0, max_checks = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto range = oracle::random_range(rng);
    const auto dnf = semver::parse_constraint(range);
    for (int j = 0; j < 6; ++j) {
      const auto& v = pool[rng() % pool.size()];
      c.expect(semver::satisfies(semver::parse_version(v), dnf) == oracle::satisfies(v, range),
               "satisfies(" + v + ", " + range + ")");
      ++pairs;
    }
    auto got = semver::max_satisfying(parsed, dnf);
    auto want = oracle::max_satisfying(pool, range);
    c.expect(bool(got) == bool(want) && (!got || *got == semver::parse_version(*want)), "max_satisfying " + range);
    ++max_checks;
  }

  // The checked-in list: node-semver's answers, which include "12 || ~13.0.1".
  auto doc = testing::load_json(testing::fixture("semver_node.json"));
  std::size_t fixture_rows = 0;
  bool saw_example = false;
  for (const auto& row : doc["cases"]) {
    const auto range = row[0].get<std::string>();
    const auto version = row[1].get<std::string>();
    saw_example |= range == "12 || ~13.0.1";
    const bool expected = row[2].get<bool>();
    c.expect(semver::satisfies(semver::parse_version(version), semver::parse_constraint(range)) == expected,
             "fixture satisfies(" + version + ", " + range + ")");
    c.expect(oracle::satisfies(version, range) == expected, "oracle disagrees with fixture on " + range);
    ++fixture_rows;
  }
  std::vector<semver::Version> fixture_versions;
  std::vector<std::string> fixture_texts;
  for (const auto& v : doc["versions"]) {
    fixture_texts.push_back(v.get<std::string>());
    fixture_versions.push_back(semver::parse_version(fixture_texts.back()));
  }
  for (const auto& row : doc["max"]) {
    const auto range = row[0].get<std::string>();
    auto got = semver::max_satisfying(fixture_versions, semver::parse_constraint(range));
    auto want = oracle::max_satisfying(fixture_texts, range);
    c.expect(row[1].is_null() ? !got : (got && *got == semver::parse_version(row[1].get<std::string>())),
             "fixture max_satisfying " + range);
    c.expect(bool(got) == bool(want), "oracle max_satisfying " + range);
    ++max_checks;
  }
  c.expect(saw_example, "fixture lacks \"12 || ~13.0.1\"");
  const auto example = semver::parse_constraint("12 || ~13.0.1");
  c.expect(semver::satisfies(semver::parse_version("13.0.5"), example), "13.0.5 in 12 || ~13.0.1");
  c.expect(!semver::satisfies(semver::parse_version("13.1.0"), example), "13.1.0 not in 12 || ~13.0.1");
  c.expect(pairs >= 10'000, "fewer than 10,000 random pairs");

  const double elapsed = seconds_since(t0);
  c.expect(elapsed < 30, "took " + std::to_string(elapsed) + "s");
  return c.outcome(std::to_string(pairs) + " random pairs, " + std::to_string(fixture_rows) + " fixture rows, " +
                   std::to_string(max_checks) + " max_satisfying checks");
}

// -- 2 -------------------------------------------------------------------------

struct IngestSize {
  std::int64_t rows = 0;
  std::int64_t db_bytes = 0;
  std::int64_t content_bytes = 0;
  std::size_t last_doc_versions = 0;
};

IngestSize ingest_republishing_feed(int n) {
  std::vector<json> events;
  for (int i = 0; i < n; ++i)
    events.push_back(testing::publish(i, "monolith", "1." + std::to_string(i / 100) + "." + std::to_string(i % 100),
                                      {{"description", "release " + std::to_string(i)},
                                       {"dependencies", {{"helper", "^2.0.0"}, {"util", "~1.4.0"}}},
                                       {"scripts", {{"test", "node test.js"}}}}));
  auto s = parse_scenario(scenario_json("growth", std::move(events)));
  testing::TempDir dir;
  SimulationOptions opts;
  opts.store_path = (dir / "meta.db").string();
  opts.archive_tarballs = false;
  Simulation sim(s, opts);
  sim.run();

  IngestSize r;
  r.rows = sim.store().count("versions");
  auto last = json::parse(sim.registry().handle("/_changes?since=" + std::to_string(n - 1) + "&include_docs=true").body);
  r.last_doc_versions = last["results"][0]["doc"]["versions"].size();
  sim.store().exec("PRAGMA wal_checkpoint(TRUNCATE)");
  r.db_bytes = std::stoll(*sim.store()
                               .query("SELECT page_count * page_size FROM pragma_page_count(), pragma_page_size()")
                               .rows.at(0)
                               .at(0));
  r.content_bytes = std::stoll(*sim.store()
                                    .query("SELECT (SELECT total(length(version) + length(manifest_digest) + "
                                           "length(extra_metadata) + length(coalesce(tarball_url, ''))) FROM versions) + "
                                           "(SELECT total(length(depends_on_name) + length(constraint_raw) + "
                                           "length(coalesce(constraint_dnf, ''))) FROM dependencies)")
                                    .rows.at(0)
                                    .at(0));
  return r;
}

Outcome anti_quadratic_ingest() {
  const auto t0 = std::chrono::steady_clock::now();
  Checks c;
  auto half = ingest_republishing_feed(500);
  auto full = ingest_republishing_feed(1000);
  c.expect(full.rows == 1000, "version rows = " + std::to_string(full.rows));
  c.expect(half.rows == 500, "version rows at N=500 = " + std::to_string(half.rows));
  c.expect(full.last_doc_versions == 1000, "last document lists " + std::to_string(full.last_doc_versions));
  const double db_ratio = double(full.db_bytes) / double(half.db_bytes);
  const double content_ratio = double(full.content_bytes) / double(half.content_bytes);
  c.expect(db_ratio < 2.2, "database size ratio " + std::to_string(db_ratio));
  c.expect(content_ratio < 2.2, "content size ratio " + std::to_string(content_ratio));
  const double elapsed = seconds_since(t0);
  c.expect(elapsed < 120, "took " + std::to_string(elapsed) + "s");
  char buf[160];
  std::snprintf(buf, sizeof buf, "1000 rows; bytes N=500 %lld, N=1000 %lld (x%.3f); content x%.3f",
                static_cast<long long>(half.db_bytes), static_cast<long long>(full.db_bytes), db_ratio, content_ratio);
  return c.outcome(buf);
}

// -- 3 -------------------------------------------------------------------------

Outcome deletion_retention() {
  Checks c;
  std::vector<json> events;
  std::vector<std::pair<std::string, std::string>> published;
  for (int i = 0; i < 100; ++i) {
    const auto pkg = "pkg-" + std::to_string(i % 20);
    const auto ver = std::to_string(1 + i / 20) + ".0.0";
    events.push_back(testing::publish(10.0 * i, pkg, ver, {{"tarball_size", 200 + 37 * i}}));
    published.emplace_back(pkg, ver);
  }
  std::mt19937_64 rng(40);
  auto doomed = published;
  std::shuffle(doomed.begin(), doomed.end(), rng);
  doomed.resize(40);
  for (std::size_t j = 0; j < doomed.size(); ++j)
    events.push_back(testing::event(2000.0 + double(j), "delete_version",
                                    {{"package", doomed[j].first}, {"version", doomed[j].second}}));
  auto s = parse_scenario(scenario_json("retention", events));

  testing::TempDir dir;
  SimulationOptions opts;
  opts.store_path = (dir / "meta.db").string();
  opts.blob_root = dir / "blobs";
  {
    Simulation sim(s, opts);
    sim.run();
    c.expect(sim.store().count("versions") == 100, "version rows " + std::to_string(sim.store().count("versions")));
    c.expect(sim.store().count("versions", "deleted = 1") == 40,
             "deleted rows " + std::to_string(sim.store().count("versions", "deleted = 1")));
  }

  // Reopen everything from disk before reading the blobs back.
  MetadataStore store(opts.store_path);
  SimulatedClock clock;
  auto ro = quiet_blob_options(opts.blob_root);
  ro.read_only = true;
  BlobManager blobs(ro, clock);
  std::size_t readable = 0;
  for (std::size_t i = 0; i < published.size(); ++i) {
    const auto& [pkg, ver] = published[i];
    auto st = store.prepare(
        "SELECT t.blob_key FROM downloaded_tarballs t JOIN versions v ON v.id = t.version_id "
        "JOIN packages p ON p.id = v.package_id WHERE p.name = ?1 AND v.version = ?2");
    st.bind_all(pkg, ver);
    if (!st.step()) {
      c.expect(false, "no archived tarball for " + pkg + "@" + ver);
      continue;
    }
    try {
      const bool same = read_blob(opts.blob_root, blobs.lookup(st.text_at(0))) ==
                        scenario_tarball_bytes(pkg, ver, s.events[i].body);
      c.expect(same, "bytes differ for " + pkg + "@" + ver);
      readable += same;
    } catch (const Error& e) {
      c.expect(false, pkg + "@" + ver + ": " + e.what());
    }
  }
  return c.outcome("100 rows, 40 flagged deleted, " + std::to_string(readable) + "/100 blobs bit-exact");
}

// -- 4 -------------------------------------------------------------------------

// `follower manager` in a child process, listening on an ephemeral port.
class ManagerProcess {
 public:
  explicit ManagerProcess(const std::filesystem::path& root) {
    int fds[2];
    if (::pipe(fds) != 0) throw std::runtime_error("pipe failed");
    pid_ = ::fork();
    if (pid_ < 0) throw std::runtime_error("fork failed");
    if (pid_ == 0) {
      ::dup2(fds[1], STDOUT_FILENO);
      ::close(fds[0]);
      int devnull = ::open("/dev/null", O_WRONLY);
      ::dup2(devnull, STDERR_FILENO);
      const std::string bin = FOLLOWER_BIN;
      ::execl(bin.c_str(), bin.c_str(), "--blob-root", root.c_str(), "--log-level", "error", "manager", "--listen",
              "127.0.0.1:0", static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(fds[1]);
    std::string line;
    char ch = 0;
    while (::read(fds[0], &ch, 1) == 1 && ch != '\n') line += ch;
    ::close(fds[0]);
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("port")) throw std::runtime_error("manager did not start: " + line);
    address_ = "127.0.0.1:" + std::to_string(j["port"].get<int>());
  }
  ~ManagerProcess() { kill(SIGTERM); }
  ManagerProcess(const ManagerProcess&) = delete;
  ManagerProcess& operator=(const ManagerProcess&) = delete;

  const std::string& address() const { return address_; }
  void kill(int sig) {
    if (pid_ <= 0) return;
    ::kill(pid_, sig);
    ::waitpid(pid_, nullptr, 0);
    pid_ = -1;
  }

 private:
  pid_t pid_ = -1;
  std::string address_;
};

std::string blob_body(const std::string& key, std::size_t size) {
  std::string s = key + ":";
  std::uint64_t x = std::hash<std::string>{}(key);
  while (s.size() < size) {
    x = x * 6364136223846793005ULL + 1442695040888963407ULL;
    s += char('a' + (x >> 59));
  }
  s.resize(size);
  return s;
}

Outcome blob_concurrency_and_crashes() {
  const auto t0 = std::chrono::steady_clock::now();
  Checks c;
  testing::TempDir dir;
  const auto root = dir.path();
  constexpr int kWorkers = 8, kBlobs = 10'000, kCrashes = 50;

  std::map<std::string, std::size_t> sizes;
  {
    ManagerProcess manager(root);
    std::vector<std::thread> threads;
    std::vector<std::string> errors(kWorkers);
    for (int w = 0; w < kWorkers; ++w) {
      threads.emplace_back([&, w] {
        try {
          auto client = ManagerClient::connect(manager.address());
          for (int i = w; i < kBlobs; i += kWorkers) {
            const auto key = "blob-" + std::to_string(i);
            store_blob(*client, root, key, blob_body(key, 1 + std::size_t(i * 7919 % 3000)));
          }
        } catch (const std::exception& e) {
          errors[std::size_t(w)] = e.what();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (const auto& e : errors) c.expect(e.empty(), "worker: " + e);
    for (int i = 0; i < kBlobs; ++i) sizes["blob-" + std::to_string(i)] = 1 + std::size_t(i * 7919 % 3000);

    // Workers that die between reserve and commit.
    for (int k = 0; k < kCrashes; ++k) {
      int fds[2];
      if (::pipe(fds) != 0) throw std::runtime_error("pipe failed");
      pid_t pid = ::fork();
      if (pid == 0) {
        ::close(fds[0]);
        try {
          auto client = ManagerClient::connect(manager.address());
          const auto key = "crash-" + std::to_string(k);
          auto ticket = client->reserve(key, 4096);
          const auto body = blob_body(key, 4096);
          if (k % 3 == 0) write_range(root, ticket, body);            // fully written, never committed
          else if (k % 3 == 1) write_partial(root, ticket, body.substr(0, 1000 + k));  // torn write
          // else: nothing written at all
        } catch (...) {
          ::_exit(3);
        }
        char ready = 'r';
        (void)!::write(fds[1], &ready, 1);
        ::pause();
        ::_exit(0);
      }
      ::close(fds[1]);
      char ready = 0;
      const bool reached = ::read(fds[0], &ready, 1) == 1;
      ::close(fds[0]);
      ::kill(pid, SIGKILL);
      ::waitpid(pid, nullptr, 0);
      c.expect(reached, "crash worker " + std::to_string(k) + " never reserved");
    }
    manager.kill(SIGKILL);
  }

  // Restart and inspect.
  ManagerProcess manager(root);
  auto client = ManagerClient::connect(manager.address());
  int visible_crash_keys = 0;
  for (int k = 0; k < kCrashes; ++k) {
    try {
      client->lookup("crash-" + std::to_string(k));
      ++visible_crash_keys;
    } catch (const Error& e) {
      c.expect(e.code() == Errc::not_found, std::string("lookup after restart: ") + e.what());
    }
  }
  c.expect(visible_crash_keys == 0, std::to_string(visible_crash_keys) + " crash keys visible");
  auto stats = client->stats(std::nullopt);
  c.expect(stats.count == std::uint64_t(kBlobs), "index count " + std::to_string(stats.count));

  SimulatedClock clock;
  auto ro = quiet_blob_options(root);
  ro.read_only = true;
  BlobManager reader(ro, clock);
  const auto entries = reader.entries();
  c.expect(entries.size() == std::size_t(kBlobs), "entries " + std::to_string(entries.size()));
  c.expect(non_overlapping(entries), "overlapping entries");
  for (const auto& [key, loc] : entries) c.expect(sizes.count(key) && sizes[key] == loc.num_bytes, "size of " + key);

  std::mt19937_64 rng(100);
  int identical = 0;
  for (int i = 0; i < 100; ++i) {
    const auto key = "blob-" + std::to_string(rng() % kBlobs);
    try {
      const bool same = read_blob(root, client->lookup(key)) == blob_body(key, sizes[key]);
      c.expect(same, "read of " + key + " differs");
      identical += same;
    } catch (const Error& e) {
      c.expect(false, key + ": " + e.what());
    }
  }

  // Abandoned ranges stay holes: a fresh write of a crashed key lands elsewhere.
  auto again = store_blob(*client, root, "crash-0", blob_body("crash-0", 4096));
  c.expect(read_blob(root, again) == blob_body("crash-0", 4096), "rewrite of crash-0");
  bool clear_of_holes = true;
  for (const auto& h : reader.holes())
    if (h.file_name == again.file_name && again.byte_offset < h.offset + h.size &&
        h.offset < again.byte_offset + again.num_bytes)
      clear_of_holes = false;
  c.expect(clear_of_holes, "new write reuses an abandoned range");

  const double elapsed = seconds_since(t0);
  c.expect(elapsed < 300, "took " + std::to_string(elapsed) + "s");
  return c.outcome(std::to_string(entries.size()) + " non-overlapping entries from 8 workers, " +
                   std::to_string(identical) + "/100 reads identical, " + std::to_string(kCrashes) +
                   " killed writers, " + std::to_string(visible_crash_keys) + " visible after restart");
}

// -- 5 -------------------------------------------------------------------------

struct SlaResult {
  json report;
  std::vector<Millis> delays;
};

SlaResult replay_with_delays(const std::vector<Millis>& delays, Millis sla, Checks& c) {
  std::vector<json> events;
  for (std::size_t i = 0; i < delays.size(); ++i)
    events.push_back(testing::publish(double(i) * 2 * 86400, "t" + std::to_string(i), "1.0.0",
                                      {{"tarball_delay", ms(delays[i])}}));
  testing::TempDir dir;
  testing::write_file(dir / "scenario.json", scenario_json("sla", events).dump());
  const auto store = (dir / "meta.db").string();
  const auto blobs = (dir / "blobs").string();
  auto run = cli({"--store", store, "--blob-root", blobs, "--log-level", "error", "replay", "run", "--scenario",
                  (dir / "scenario.json").string()});
  c.expect(run.code == 0, "replay run: " + run.err);
  auto report = cli({"--store", store, "--log-level", "error", "latency-report", "--sla", ms(sla)});
  c.expect(report.code == 0, "latency-report: " + report.err);
  return {json::parse(report.out, nullptr, false), delays};
}

Millis nearest_rank(std::vector<Millis> xs, double p) {
  std::sort(xs.begin(), xs.end());
  auto k = std::size_t(std::ceil(p * double(xs.size())));
  return xs[std::max<std::size_t>(k, 1) - 1];
}

Outcome download_sla() {
  Checks c;
  const Millis sla = 24h;

  // Scripted mix of fast, slow and exactly-at-SLA downloads.
  std::mt19937_64 rng(988);
  std::vector<Millis> delays;
  for (int i = 0; i < 1000; ++i) {
    const auto r = rng() % 100;
    std::int64_t lo = 1'000, hi = 20 * 3'600'000;
    if (r >= 85 && r < 95) lo = 20 * 3'600'000, hi = 30 * 3'600'000;
    if (r >= 95) lo = 30 * 3'600'000, hi = 47 * 3'600'000;
    delays.emplace_back(lo + std::int64_t(rng() % std::uint64_t(hi - lo)));
  }
  for (int i = 0; i < 5; ++i) delays[std::size_t(i * 97)] = sla;
  auto mixed = replay_with_delays(delays, sla, c);
  const auto within = std::count_if(delays.begin(), delays.end(), [&](Millis d) { return d <= sla; });
  const double oracle_fraction = double(within) / double(delays.size());
  const auto& r = mixed.report;
  c.expect(r.is_object() && r["count"] == 1000, "count " + r.dump());
  c.expect(r.value("fraction_within", -1.0) == oracle_fraction,
           "fraction " + std::to_string(r.value("fraction_within", -1.0)) + " vs " + std::to_string(oracle_fraction));
  c.expect(r.value("within_sla", -1) == within, "within_sla");
  c.expect(r.value("p50_ms", -1) == nearest_rank(delays, 0.50).count(), "p50");
  c.expect(r.value("p99_ms", -1) == nearest_rank(delays, 0.99).count(), "p99");

  // 988 inside the SLA, 12 outside.
  std::vector<Millis> framed;
  for (int i = 0; i < 1000; ++i)
    framed.emplace_back(i % 83 == 41 ? 30h + Millis{i} : Millis{60'000 + 86'000LL * i});
  const auto late_count = std::count_if(framed.begin(), framed.end(), [&](Millis d) { return d > sla; });
  c.expect(late_count == 12, "framed scenario has " + std::to_string(late_count) + " late downloads");
  auto framed_run = replay_with_delays(framed, sla, c);
  const double framed_fraction = framed_run.report.value("fraction_within", -1.0);
  c.expect(framed_fraction == 0.988, "framed fraction " + std::to_string(framed_fraction));

  char buf[160];
  std::snprintf(buf, sizeof buf, "mixed: %.3f within 24h (oracle %.3f); framed: %.3f", r.value("fraction_within", -1.0),
                oracle_fraction, framed_fraction);
  return c.outcome(buf);
}

// -- 6 -------------------------------------------------------------------------

Outcome rate_limited_sweep() {
  Checks c;
  std::vector<json> events;
  for (int i = 0; i < 1000; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "p%04d", i);
    events.push_back(testing::publish(0, name, "1.0.0"));
    events.push_back(testing::event(0, "metric", {{"package", name}, {"week_start", "2022-01-03"}, {"downloads", i}}));
  }
  auto s = parse_scenario(scenario_json(
      "sweep", events, {{"metrics_budget", {{"requests_per_interval", 1}, {"interval", "1m"}, {"batch_size", 128}}}}));
  SimulationOptions opts;
  opts.archive_tarballs = false;
  opts.sweep_metrics = true;
  Simulation sim(s, opts);
  sim.run();
  const auto& sweep = *sim.sweep();
  const auto minutes = std::chrono::duration_cast<std::chrono::minutes>(sweep.finished_at - sweep.started_at);
  c.expect(sweep.finished_at - sweep.started_at == 8min, "sweep took " + format_duration(sweep.finished_at - sweep.started_at));
  c.expect(sweep.batches == 8 && sweep.requests == 8, "batches " + std::to_string(sweep.batches));
  c.expect(sim.registry().budget_violations() == 0, "mock saw budget violations");
  auto requests = sim.registry().metrics_requests();
  for (std::size_t i = 1; i < requests.size(); ++i) c.expect(requests[i] - requests[i - 1] >= 1min, "requests closer than 1m");
  const auto one_point = sim.store().count("download_metrics", "json_array_length(download_counts) = 1");
  c.expect(one_point == 1000, std::to_string(one_point) + " packages with exactly one point");
  c.expect(sim.store().count("download_metrics") == 1000, "metric rows");
  return c.outcome("1000 packages in " + std::to_string(sweep.requests) + " requests over " +
                   std::to_string(minutes.count()) + " simulated minutes, " +
                   std::to_string(sim.registry().budget_violations()) + " violations, " + std::to_string(one_point) +
                   " single points");
}

// -- 7 -------------------------------------------------------------------------

Outcome impact_pipeline() {
  Checks c;
  const auto fixture = testing::fixture("impact_scenario.json");
  auto scenario = load_scenario(fixture);
  auto expected = follower::oracle(scenario);
  testing::TempDir dir;
  const auto store = (dir / "meta.db").string();
  const auto blobs = (dir / "blobs").string();
  auto base = [&](std::vector<std::string> args) {
    args.insert(args.begin(), {"--store", store, "--blob-root", blobs, "--log-level", "error"});
    return cli(std::move(args));
  };
  auto run = base({"replay", "run", "--scenario", fixture.string(), "--sweep-metrics", "--sync-advisories"});
  c.expect(run.code == 0, "replay run: " + run.err);

  auto impact = base({"analyze", "impact", "--min-downloads", "1000000", "--require-tests"});
  c.expect(impact.code == 0, "analyze impact: " + impact.err);
  std::set<std::tuple<std::string, std::string, std::string>> got;
  std::map<std::pair<std::string, std::string>, std::string> keys;
  auto rows = lines_of(impact.out);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    got.emplace(tsv_field(rows[i], 0), tsv_field(rows[i], 1), tsv_field(rows[i], 2));
    keys[{tsv_field(rows[i], 0), tsv_field(rows[i], 1)}] = tsv_field(rows[i], 3);
  }
  const auto want = expected.impact(1'000'000, true);
  c.expect(!want.empty() && got == want, "impact pairs differ from the oracle");
  // The fixture must actually exercise both exclusions.
  c.expect(expected.impact(std::nullopt, true).size() > want.size(), "no vulnerable package below the threshold");
  c.expect(expected.impact(1'000'000, false).size() > want.size(), "no client without a test script");

  SimulatedClock end_clock(scenario.end());
  MockRegistry registry(scenario, end_clock);
  int copied = 0, gone_upstream = 0;
  for (const auto& [client, key] : keys) {
    const auto dest = dir / ("copy-" + std::to_string(copied + 1));
    auto cp = base({"blob", "cp", key, dest.string()});
    const bool ok = cp.code == 0 && expected.blobs.count(client) && testing::slurp(dest) == expected.blobs.at(client);
    c.expect(ok, "blob cp " + key + ": " + cp.err);
    copied += ok;
    if (registry.get(scenario_tarball_url(scenario.registry, client.first, client.second)).status == 404) ++gone_upstream;
  }
  c.expect(gone_upstream > 0, "no result tarball 404s upstream");
  return c.outcome(std::to_string(got.size()) + " pairs match the oracle; " + std::to_string(copied) +
                   " blob cp ok, " + std::to_string(gone_upstream) + " of them 404 upstream");
}

// -- 8 -------------------------------------------------------------------------

bool stats_match(const json& s, const oracle::Recount& r, Checks& c, const std::string& label) {
  const bool ok = s.is_object() && s.value("count", 0ull) == r.count && s.value("total_bytes", 0ull) == r.bytes &&
                  s.value("retained_count", 0ull) == r.kept && s.value("retained_bytes", 0ull) == r.kept_bytes &&
                  s.value("fraction_retained", -1.0) == double(r.kept) / double(r.count) &&
                  s.value("byte_fraction_retained", -1.0) == double(r.kept_bytes) / double(r.bytes);
  c.expect(ok, label + ": " + s.dump());
  return ok;
}

Outcome size_stats() {
  Checks c;
  // Skewed synthetic store.
  testing::TempDir skewed;
  {
    SimulatedClock clock;
    BlobManager m(quiet_blob_options(skewed.path()), clock);
    std::mt19937_64 rng(184);
    std::lognormal_distribution<double> size(7.0, 1.8);
    for (int i = 0; i < 5000; ++i) {
      const auto n = std::clamp<std::size_t>(std::size_t(size(rng)), 1, 4 << 20);
      store_blob(m, skewed.path(), "s" + std::to_string(i), std::string(n, char('a' + i % 26)));
    }
    for (int i = 0; i < 5; ++i) m.reserve("pending" + std::to_string(i), 1000);  // never committed
  }
  int matched = 0;
  for (std::uint64_t t : {0ull, 512ull, 1100ull, 18400ull, 100000ull, 1ull << 40}) {
    auto r = cli({"--blob-root", skewed.path().string(), "--log-level", "error", "blob", "stats", "--threshold",
                  std::to_string(t)});
    c.expect(r.code == 0, "blob stats: " + r.err);
    matched += stats_match(json::parse(r.out, nullptr, false), oracle::recount(skewed.path(), t), c,
                           "threshold " + std::to_string(t));
  }

  // Trade-off fixture: a threshold that keeps 99% of tarballs and half the bytes.
  std::vector<json> events;
  for (int i = 0; i < 1000; ++i)
    events.push_back(testing::publish(i, "t" + std::to_string(i), "1.0.0", {{"tarball_size", i % 100 == 50 ? 9900 : 100}}));
  auto s = parse_scenario(scenario_json("tradeoff", events));
  testing::TempDir dir;
  SimulationOptions opts;
  opts.blob_root = dir / "blobs";
  {
    Simulation sim(s, opts);
    sim.run();
  }
  auto r = cli({"--blob-root", opts.blob_root.string(), "--log-level", "error", "blob", "stats", "--threshold", "1000"});
  c.expect(r.code == 0, "blob stats: " + r.err);
  auto j = json::parse(r.out, nullptr, false);
  stats_match(j, oracle::recount(opts.blob_root, 1000), c, "trade-off fixture");
  const double kept = j.value("fraction_retained", -1.0), bytes = j.value("byte_fraction_retained", -1.0);
  c.expect(kept == 0.99, "retained fraction " + std::to_string(kept));
  c.expect(bytes == 0.5, "retained byte fraction " + std::to_string(bytes));

  char buf[160];
  std::snprintf(buf, sizeof buf, "%d/6 skewed thresholds match the recount; trade-off keeps %.2f of blobs, %.2f of bytes",
                matched, kept, bytes);
  return c.outcome(buf);
}

// -- 9 -------------------------------------------------------------------------

std::set<oracle::UpdateRow> updates_from_store(MetadataStore& store, bool include_prereleases, const std::string& pkg) {
  std::map<std::int64_t, std::string> names;
  auto st = store.prepare("SELECT v.id, v.version FROM versions v JOIN packages p ON p.id = v.package_id WHERE p.name = ?1");
  st.bind_all(pkg);
  while (st.step()) names[st.int_at(0)] = st.text_at(1);
  std::set<oracle::UpdateRow> out;
  for (const auto& u : compute_updates(store, {.include_prereleases = include_prereleases}))
    if (names.count(u.to_version_id))
      out.emplace(names[u.from_version_id], names[u.to_version_id], std::string(update_kind_name(u.kind)), u.out_of_order);
  return out;
}

std::map<std::string, std::vector<oracle::Published>> published_by_package(const Scenario& s) {
  std::map<std::string, std::vector<oracle::Published>> out;
  for (const auto& e : s.events)
    if (e.type == "publish")
      out[e.body["package"].get<std::string>()].push_back({e.body["version"].get<std::string>(), e.at.count()});
  return out;
}

Outcome update_analysis() {
  Checks c;
  std::vector<Scenario> scenarios{load_scenario(testing::fixture("backport_scenario.json"))};
  std::mt19937_64 rng(91);
  for (int k = 0; k < 30; ++k) {
    std::vector<std::string> versions;
    std::set<std::string> seen;
    while (versions.size() < 12) {
      auto v = oracle::random_version(rng);
      v = v.substr(0, v.find('+'));
      if (seen.insert(v).second) versions.push_back(v);
    }
    std::shuffle(versions.begin(), versions.end(), rng);
    std::vector<json> events;
    double at = 0;
    for (const auto& v : versions) {
      at += double(rng() % 3) * 60;  // some share a publish instant
      events.push_back(testing::publish(at, "r" + std::to_string(k), v));
    }
    scenarios.push_back(parse_scenario(scenario_json("random-updates", events)));
  }

  std::size_t rows = 0, backports = 0, fixture_backports = 0;
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    SimulationOptions opts;
    opts.archive_tarballs = false;
    Simulation sim(scenarios[i], opts);
    sim.run();
    for (const auto& [pkg, published] : published_by_package(scenarios[i])) {
      for (bool pre : {false, true}) {
        auto got = updates_from_store(sim.store(), pre, pkg);
        auto want = oracle::expected_updates(published, pre);
        c.expect(got == want, scenarios[i].name + " " + pkg + (pre ? " with prereleases" : ""));
        rows += got.size();
        for (const auto& r : got) {
          backports += std::get<3>(r);
          if (i == 0) fixture_backports += std::get<3>(r);
        }
      }
    }
  }
  c.expect(fixture_backports > 0, "the backport fixture produced no out-of-order rows");
  return c.outcome(std::to_string(scenarios.size()) + " scenarios, " + std::to_string(rows) + " update rows (" +
                   std::to_string(backports) + " out of order) match the oracle");
}

}  // namespace

int main(int argc, char** argv) {
  set_log_sink(nullptr);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"semver oracle equivalence", semver_equivalence},
      {"anti-quadratic ingest", anti_quadratic_ingest},
      {"deletion retention", deletion_retention},
      {"blob store concurrency and crash safety", blob_concurrency_and_crashes},
      {"download SLA machinery", download_sla},
      {"rate-limited sweep", rate_limited_sweep},
      {"impact pipeline", impact_pipeline},
      {"size-stats trade-off", size_stats},
      {"update analysis", update_analysis},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = int(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %d. %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
