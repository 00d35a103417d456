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

#include "follower/cli.h"

#include <atomic>
#include <fstream>
#include <map>
#include <thread>

#include "CLI11.hpp"
#include "follower/analyses.h"
#include "follower/blob_store.h"
#include "follower/changes.h"
#include "follower/config.h"
#include "follower/download.h"
#include "follower/errors.h"
#include "follower/http.h"
#include "follower/json_log.h"
#include "follower/manager_protocol.h"
#include "follower/replay.h"
#include "follower/scrapers.h"
#include "follower/store.h"

namespace follower {

using nlohmann::json;

namespace {

std::atomic<bool> g_stop{false};
static_assert(std::atomic<bool>::is_always_lock_free);

/// Sleeps in short slices so a stop request is noticed promptly.
void pause_for(Millis d) {
  const auto until = std::chrono::steady_clock::now() + d;
  while (!g_stop && std::chrono::steady_clock::now() < until)
    std::this_thread::sleep_for(std::min<std::chrono::steady_clock::duration>(
        Millis{100}, until - std::chrono::steady_clock::now()));
}

void print_table(std::ostream& out, const QueryResult& t, bool csv) {
  if (csv) {
    write_csv(out, t);
    return;
  }
  for (std::size_t i = 0; i < t.columns.size(); ++i) out << (i ? "\t" : "") << t.columns[i];
  out << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "\t" : "") << row[i].value_or("");
    out << '\n';
  }
}

std::pair<std::string, int> split_host_port(const std::string& address, const char* field) {
  auto colon = address.rfind(':');
  if (colon == std::string::npos) throw Error(Errc::config_invalid, std::string(field) + " must be host:port");
  try {
    return {address.substr(0, colon), std::stoi(address.substr(colon + 1))};
  } catch (const std::exception&) {
    throw Error(Errc::config_invalid, std::string(field) + " has an invalid port");
  }
}

BlobManager::Options manager_options(const Config& cfg, bool read_only) {
  BlobManager::Options o;
  o.root = cfg.blob.root;
  o.segment_size = cfg.blob.segment_size;
  o.ticket_ttl = cfg.blob.ticket_ttl;
  o.capacity = cfg.blob.capacity;
  o.read_only = read_only;
  return o;
}

/// The manager named in the config, or an in-process one over blob.root.
std::unique_ptr<BlobIndex> open_blob_index(const Config& cfg, Clock& clock, bool read_only) {
  if (!cfg.blob.manager.empty()) return ManagerClient::connect(cfg.blob.manager);
  cfg.require({"blob.root"});
  return std::make_unique<BlobManager>(manager_options(cfg, read_only), clock);
}

json sweep_json(const SweepReport& r) {
  return {{"sweep", r.sweep_id},
          {"started_at", format_iso8601(r.started_at)},
          {"finished_at", format_iso8601(r.finished_at)},
          {"estimated_completion", format_iso8601(r.estimated_completion)},
          {"packages", r.packages},
          {"batches", r.batches},
          {"requests", r.requests},
          {"points_appended", r.points_appended},
          {"failures", r.failures},
          {"rate_limited", r.rate_limited},
          {"upstream_errors", r.upstream_errors}};
}

struct Options {
  std::string config_path;
  std::string store_override;
  std::string blob_root_override;
  std::string log_level = "info";

  bool once = false;
  int limit = 0;
  std::string listen;
  int count = 0;
  bool continuous = false;

  std::string analysis;
  std::optional<std::int64_t> min_downloads;
  bool require_tests = false;
  bool csv = false;
  std::string as_of = "publish";
  bool include_prereleases = false;

  std::string key;
  std::string dest;
  std::optional<std::uint64_t> threshold;
  std::string sla;

  std::string scenario;
  int port = 0;
  bool no_archive = false;
  bool sweep_metrics = false;
  bool sync_advisories = false;
};

Config load(const Options& o) {
  std::string path = o.config_path;
  if (path.empty())
    if (auto env = process_env("FOLLOWER_CONFIG")) path = *env;
  auto cfg = load_config(path);
  if (!o.store_override.empty()) cfg.store.path = o.store_override;
  if (!o.blob_root_override.empty()) cfg.blob.root = o.blob_root_override;
  return cfg;
}

int cmd_ingest(const Config& cfg, const Options& o, std::ostream& out) {
  cfg.require({"store.path", "feed.url"});
  MetadataStore store(cfg.store.path);
  SystemClock clock;
  NetHttpClient http;
  HttpChangesFeed feed(http, cfg.feed.url);
  DownloadQueue queue(store, clock, cfg.downloads);
  Ingestor ingestor(store, feed, &queue, clock, cfg.feed.name, cfg.feed.start_cursor);
  const int limit = o.limit > 0 ? o.limit : cfg.feed.poll_limit;
  log_event(LogLevel::info, "ingest.start", {{"feed", cfg.feed.name}, {"seq", ingestor.cursor()}});
  while (!g_stop) {
    std::size_t n = 0;
    try {
      n = ingestor.step(limit);
    } catch (const Error& e) {
      if (e.code() != Errc::feed_unavailable && e.code() != Errc::store_unavailable) throw;
      log_event(LogLevel::warn, "ingest.retry", {{"error", errc_name(e.code())}, {"message", e.what()}});
      if (o.once) throw;
      pause_for(cfg.feed.poll_interval);
      continue;
    }
    if (n == 0) {
      if (o.once) break;
      pause_for(cfg.feed.poll_interval);
    }
  }
  const auto& s = ingestor.stats();
  out << json{{"seq", ingestor.cursor()},
              {"events", s.events},
              {"versions_inserted", s.totals.versions_inserted},
              {"versions_flagged", s.totals.versions_flagged},
              {"jobs_enqueued", s.totals.jobs_enqueued},
              {"dead_letters", s.dead_letters},
              {"resyncs", s.resyncs}}
             .dump()
      << '\n';
  return 0;
}

int cmd_manager(const Config& cfg, const Options& o, std::ostream& out) {
  cfg.require({"blob.root"});
  auto [host, port] = split_host_port(o.listen.empty() ? cfg.blob.listen : o.listen, "blob.listen");
  if (o.port > 0) port = o.port;
  SystemClock clock;
  BlobManager manager(manager_options(cfg, false), clock);
  ManagerServer server(manager, host, port);
  out << json{{"event", "manager.listening"}, {"host", host}, {"port", server.port()}}.dump() << std::endl;
  log_event(LogLevel::info, "manager.listening", {{"host", host}, {"port", server.port()}});
  while (!g_stop) pause_for(Millis{500});
  server.stop();
  log_event(LogLevel::info, "manager.stopped");
  return 0;
}

int cmd_workers(const Config& cfg, const Options& o, std::ostream& out) {
  cfg.require({"store.path", "blob.root"});
  MetadataStore store(cfg.store.path);
  SystemClock clock;
  NetHttpClient http;
  auto index = open_blob_index(cfg, clock, false);
  DownloadQueue queue(store, clock, cfg.downloads);
  const int count = o.count > 0 ? o.count : cfg.workers;
  log_event(LogLevel::info, "workers.start", {{"count", count}, {"pending", queue.pending()}});
  run_workers(queue, count, http, *index, cfg.blob.root, clock, g_stop, o.once);
  out << json{{"pending", queue.pending()}}.dump() << '\n';
  return 0;
}

int cmd_sweep(const Config& cfg, const Options& o, std::ostream& out) {
  cfg.require({"store.path", "metrics.url"});
  MetadataStore store(cfg.store.path);
  SystemClock clock;
  NetHttpClient http;
  MetricsScraper scraper(store, http, clock, cfg.metrics.url, cfg.metrics.budget);
  do {
    out << sweep_json(scraper.sweep()).dump() << std::endl;
  } while (o.continuous && !g_stop);
  return 0;
}

int cmd_advisories(const Config& cfg, std::ostream& out) {
  cfg.require({"store.path", "advisories"});
  MetadataStore store(cfg.store.path);
  NetHttpClient http;
  auto scraper = cfg.advisories.directory.empty() ? AdvisoryScraper(store, http, cfg.advisories.url)
                                                  : AdvisoryScraper(store, cfg.advisories.directory);
  auto r = scraper.sync();
  json j = {{"documents", r.documents},
            {"advisories", r.advisories},
            {"withdrawn", r.withdrawn},
            {"unparsed_ranges", r.unparsed_ranges},
            {"rejected", r.rejected}};
  if (r.cursor) j["cursor"] = *r.cursor;
  out << j.dump() << '\n';
  return 0;
}

int cmd_analyze(const Config& cfg, const Options& o, std::ostream& out) {
  cfg.require({"store.path"});
  MetadataStore store(cfg.store.path);
  SystemClock clock;
  const auto& what = o.analysis;
  if (what == "deps") {
    auto r = materialize_direct_runtime_deps(store);
    log_event(LogLevel::info, "analyze.deps", {{"edges", r.edges}, {"skipped_names", r.skipped_names.size()}});
    print_table(out,
                store.query("SELECT cp.name AS client_package, c.version AS client_version, p.name AS depends_on "
                            "FROM metadata_analysis.version_direct_runtime_deps e "
                            "JOIN versions c ON c.id = e.v JOIN packages cp ON cp.id = c.package_id "
                            "JOIN packages p ON p.id = e.depends_on_pkg ORDER BY cp.name, c.id, p.name"),
                o.csv);
  } else if (what == "resolve") {
    materialize_direct_runtime_deps(store);
    auto r = resolve_edges(store, AsOfPolicy::parse(o.as_of), clock.now());
    log_event(LogLevel::info, "analyze.resolve",
              {{"edges", r.edges.size()}, {"unparsed_constraints", r.unparsed_constraints}});
    print_table(out,
                store.query("SELECT cp.name AS client_package, c.version AS client_version, p.name AS depends_on, "
                            "r.constraint_dnf, rv.version AS resolved_version, r.policy "
                            "FROM metadata_analysis.resolved_direct_runtime_deps r "
                            "JOIN versions c ON c.id = r.v JOIN packages cp ON cp.id = c.package_id "
                            "JOIN packages p ON p.id = r.depends_on_pkg "
                            "LEFT JOIN versions rv ON rv.id = r.resolved_version_id ORDER BY cp.name, c.id, p.name"),
                o.csv);
  } else if (what == "updates") {
    auto r = compute_updates(store, {o.include_prereleases});
    log_event(LogLevel::info, "analyze.updates", {{"updates", r.size()}});
    print_table(out,
                store.query("SELECT p.name AS package, f.version AS from_version, t.version AS to_version, u.kind, "
                            "u.out_of_order FROM metadata_analysis.updates u "
                            "JOIN packages p ON p.id = u.package_id JOIN versions f ON f.id = u.from_version_id "
                            "JOIN versions t ON t.id = u.to_version_id ORDER BY p.name, t.published_at, t.id"),
                o.csv);
  } else if (what == "vulnerable") {
    auto r = vulnerable_versions(store);
    log_event(LogLevel::info, "analyze.vulnerable",
              {{"rows", r.rows.size()}, {"unparsed_ranges", r.unparsed_ranges}, {"unknown_packages", r.unknown_packages}});
    print_table(out,
                store.query("SELECT p.name AS package, v.version, vv.advisory_id "
                            "FROM metadata_analysis.vulnerable_versions vv JOIN versions v ON v.id = vv.version_id "
                            "JOIN packages p ON p.id = v.package_id ORDER BY p.name, v.id, vv.advisory_id"),
                o.csv);
  } else if (what == "impact") {
    materialize_direct_runtime_deps(store);
    ImpactOptions opts{o.min_downloads, o.require_tests};
    auto rows = impact_candidates(store, opts);
    log_event(LogLevel::info, "analyze.impact", {{"pairs", rows.size()}});
    print_table(out,
                store.query("SELECT client_package, client_version, vulnerable_package, blob_key "
                            "FROM metadata_analysis.impact_candidates "
                            "ORDER BY client_package, client_version_id, vulnerable_package"),
                o.csv);
  }
  return 0;
}

int cmd_blob_cp(const Config& cfg, const Options& o, std::ostream& out) {
  cfg.require({"blob.root"});
  SystemClock clock;
  auto index = open_blob_index(cfg, clock, true);
  auto loc = index->lookup(o.key);
  auto bytes = read_blob(cfg.blob.root, loc);
  if (o.dest == "-") {
    out.write(bytes.data(), std::streamsize(bytes.size()));
    out.flush();
    return 0;
  }
  const std::filesystem::path dest(o.dest);
  const auto tmp = dest.string() + ".part";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(Errc::io_failure, "cannot write " + tmp);
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f.flush()) throw Error(Errc::io_failure, "short write to " + tmp);
  }
  std::filesystem::rename(tmp, dest);
  log_event(LogLevel::info, "blob.cp", {{"key", o.key}, {"bytes", bytes.size()}, {"dest", dest.string()}});
  return 0;
}

int cmd_blob_stats(const Config& cfg, const Options& o, std::ostream& out) {
  SystemClock clock;
  auto index = open_blob_index(cfg, clock, true);
  out << to_json(index->stats(o.threshold)).dump() << '\n';
  return 0;
}

int cmd_latency(const Config& cfg, const Options& o, std::ostream& out) {
  cfg.require({"store.path"});
  Millis sla = cfg.sla;
  if (!o.sla.empty()) {
    auto d = parse_duration(o.sla);
    if (!d) throw Error(Errc::invalid_argument, "--sla must be a duration such as 24h");
    sla = *d;
  }
  MetadataStore store(cfg.store.path);
  SystemClock clock;
  DownloadQueue queue(store, clock, cfg.downloads);
  auto r = queue.latency_report(sla);
  json j = {{"count", r.count},       {"p50_ms", r.p50.count()},         {"p99_ms", r.p99.count()},
            {"sla_ms", r.sla.count()}, {"within_sla", r.within_sla},      {"p50", format_duration(r.p50)},
            {"p99", format_duration(r.p99)}, {"sla", format_duration(r.sla)}};
  j["fraction_within"] = r.count ? json(r.fraction_within) : json(nullptr);
  out << j.dump() << '\n';
  return 0;
}

int cmd_replay_serve(const Options& o, std::ostream& out) {
  auto scenario = load_scenario(o.scenario);
  SimulatedClock clock(scenario.end());
  MockRegistry registry(scenario, clock);
  ReplayServer server(registry, o.port);
  out << json{{"event", "replay.listening"}, {"url", server.base_url()}, {"scenario", scenario.name}}.dump()
      << std::endl;
  while (!g_stop) pause_for(Millis{200});
  server.stop();
  return 0;
}

int cmd_replay_run(const Config& cfg, const Options& o, std::ostream& out) {
  cfg.require({"store.path"});
  if (!o.no_archive) cfg.require({"blob.root"});
  auto scenario = load_scenario(o.scenario);
  SimulationOptions opts;
  opts.store_path = cfg.store.path;
  opts.blob_root = cfg.blob.root;
  opts.segment_size = cfg.blob.segment_size;
  opts.retry = cfg.downloads;
  opts.archive_tarballs = !o.no_archive;
  opts.sweep_metrics = o.sweep_metrics;
  opts.sync_advisories = o.sync_advisories;
  opts.poll_limit = cfg.feed.poll_limit;
  Simulation sim(scenario, opts);
  sim.run();
  json j = {{"scenario", scenario.name},
            {"clock", format_iso8601(sim.clock().now())},
            {"seq", sim.ingestor().cursor()},
            {"versions", sim.store().count("versions")},
            {"deleted_versions", sim.store().count("versions", "deleted = 1")},
            {"jobs_pending", sim.queue().pending()},
            {"budget_violations", sim.registry().budget_violations()}};
  if (sim.sweep()) j["sweep"] = sweep_json(*sim.sweep());
  out << j.dump() << '\n';
  return 0;
}

void report_error(std::ostream& err, std::string_view name, const std::string& message) {
  err << json{{"error", name}, {"message", message}}.dump() << '\n';
}

}  // namespace

void request_stop() noexcept { g_stop = true; }
bool stop_requested() noexcept { return g_stop; }
void reset_stop() noexcept { g_stop = false; }

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Registry follower: archives package metadata and tarballs, scrapes advisories and download "
               "metrics, and runs dependency analyses.",
               "follower"};
  app.option_defaults()->always_capture_default();
  app.add_option("-c,--config", o.config_path, "JSON config file (default: $FOLLOWER_CONFIG)");
  app.add_option("--store", o.store_override, "Override store.path");
  app.add_option("--blob-root", o.blob_root_override, "Override blob.root");
  app.add_option("--log-level", o.log_level, "Log level")->check(CLI::IsMember({"debug", "info", "warn", "error"}));
  app.require_subcommand(1);

  auto* ingest = app.add_subcommand("ingest", "Follow the changes feed into the store");
  ingest->add_flag("--once", o.once, "Exit once the feed is drained");
  ingest->add_option("--limit", o.limit, "Events per poll (default: feed.poll_limit)")->check(CLI::PositiveNumber);

  auto* manager = app.add_subcommand("manager", "Run the blob store manager");
  manager->add_option("--listen", o.listen, "host:port to listen on (default: blob.listen)");
  manager->add_option("--port", o.port, "Port override; 0 picks a free port")->check(CLI::NonNegativeNumber);

  auto* workers = app.add_subcommand("workers", "Run tarball download workers");
  workers->add_option("--count", o.count, "Number of worker threads (default: workers)")->check(CLI::PositiveNumber);
  workers->add_flag("--once", o.once, "Exit when the queue is empty");

  auto* sweep = app.add_subcommand("sweep-metrics", "Scrape weekly download counts for every package");
  sweep->add_flag("--continuous", o.continuous, "Run back-to-back sweeps until stopped");

  auto* advisories = app.add_subcommand("sync-advisories", "Import OSV advisories");

  auto* analyze = app.add_subcommand("analyze", "Materialize and print an analysis");
  analyze->add_option("analysis", o.analysis, "deps, resolve, updates, vulnerable or impact")
      ->required()
      ->check(CLI::IsMember({"deps", "resolve", "updates", "vulnerable", "impact"}));
  analyze->add_option("--min-downloads", o.min_downloads, "impact: latest weekly downloads must exceed N");
  analyze->add_flag("--require-tests", o.require_tests, "impact: keep clients with a test script only");
  analyze->add_flag("--csv", o.csv, "Print CSV instead of tab-separated text");
  analyze->add_option("--as-of", o.as_of, "resolve: publish, latest or an ISO-8601 time");
  analyze->add_flag("--include-prereleases", o.include_prereleases, "updates: allow prerelease endpoints");

  auto* blob = app.add_subcommand("blob", "Read from the blob store");
  blob->require_subcommand(1);
  auto* cp = blob->add_subcommand("cp", "Copy a stored blob to a file ('-' for stdout)");
  cp->add_option("key", o.key, "Blob key")->required();
  cp->add_option("dest", o.dest, "Destination path")->required();
  auto* stats = blob->add_subcommand("stats", "Blob size statistics");
  stats->add_option("--threshold", o.threshold, "Size cut-off in bytes for the retained fractions");

  auto* latency = app.add_subcommand("latency-report", "Download latency summary");
  latency->add_option("--sla", o.sla, "SLA duration such as 24h (default: sla)");

  auto* replay = app.add_subcommand("replay", "Mock registry for offline runs");
  replay->require_subcommand(1);
  auto* serve = replay->add_subcommand("serve", "Serve a scenario over HTTP");
  serve->add_option("--scenario", o.scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  serve->add_option("--port", o.port, "Port; 0 picks a free port")->check(CLI::NonNegativeNumber);
  auto* run = replay->add_subcommand("run", "Run the whole pipeline against a scenario on a simulated clock");
  run->add_option("--scenario", o.scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  run->add_flag("--no-archive", o.no_archive, "Skip tarball downloads");
  run->add_flag("--sweep-metrics", o.sweep_metrics, "Sweep download metrics at the end");
  run->add_flag("--sync-advisories", o.sync_advisories, "Import advisories at the end");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    report_error(err, "usage", e.what());
    err << "Run with --help for usage.\n";
    return 1;
  }

  // Embedders keep their own sink once this invocation returns.
  struct LogScope {
    std::ostream* sink;
    LogLevel level;
    ~LogScope() {
      set_log_sink(sink);
      set_log_level(level);
    }
  } scope{set_log_sink(&err), set_log_level(o.log_level == "debug"   ? LogLevel::debug
                                            : o.log_level == "warn"  ? LogLevel::warn
                                            : o.log_level == "error" ? LogLevel::error
                                                                     : LogLevel::info)};
  try {
    if (serve->parsed()) return cmd_replay_serve(o, out);
    const auto cfg = load(o);
    if (ingest->parsed()) return cmd_ingest(cfg, o, out);
    if (manager->parsed()) return cmd_manager(cfg, o, out);
    if (workers->parsed()) return cmd_workers(cfg, o, out);
    if (sweep->parsed()) return cmd_sweep(cfg, o, out);
    if (advisories->parsed()) return cmd_advisories(cfg, out);
    if (analyze->parsed()) return cmd_analyze(cfg, o, out);
    if (cp->parsed()) return cmd_blob_cp(cfg, o, out);
    if (stats->parsed()) return cmd_blob_stats(cfg, o, out);
    if (latency->parsed()) return cmd_latency(cfg, o, out);
    if (run->parsed()) return cmd_replay_run(cfg, o, out);
  } catch (const Error& e) {
    report_error(err, errc_name(e.code()), e.what());
    return 2;
  } catch (const std::exception& e) {
    report_error(err, errc_name(Errc::io_failure), e.what());
    return 2;
  }
  report_error(err, "usage", "no subcommand");
  return 1;
}

}  // namespace follower
