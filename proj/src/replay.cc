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

#include "follower/replay.h"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "follower/digest.h"
#include "follower/errors.h"
#include "follower/json_log.h"
#include "httplib.h"

namespace follower {

using nlohmann::json;

namespace {

const std::set<std::string> kEventTypes = {"publish",  "delete_version", "delete_package", "tarball_gone",
                                           "advisory", "withdraw_advisory", "metric",      "fault",
                                           "raw_change"};
const std::set<std::string> kEndpoints = {"changes", "tarball", "metrics", "advisories"};

[[noreturn]] void invalid(const std::string& msg) { throw Error(Errc::scenario_invalid, msg); }

std::string require_string(const json& e, const char* field, std::size_t index) {
  if (!e.contains(field) || !e[field].is_string())
    invalid("event " + std::to_string(index) + ": missing string field '" + field + "'");
  return e[field].get<std::string>();
}

Millis json_duration(const json& j, const char* what) {
  if (j.is_number()) return Millis{std::int64_t(j.get<double>() * 1000.0)};
  if (j.is_string())
    if (auto d = parse_duration(j.get<std::string>())) return *d;
  invalid(std::string("invalid duration for ") + what);
}

std::string basename_of(const std::string& package) {
  auto slash = package.rfind('/');
  return slash == std::string::npos ? package : package.substr(slash + 1);
}

const char* const kManifestFields[] = {"dependencies", "devDependencies", "peerDependencies", "optionalDependencies",
                                       "scripts",      "repository",      "description",      "license"};

/// The version manifest a publish event describes, without dist.
json publish_manifest(const std::string& package, const std::string& version, const json& e) {
  json m = e.contains("manifest") && e["manifest"].is_object() ? e["manifest"] : json::object();
  for (const char* f : kManifestFields)
    if (e.contains(f)) m[f] = e[f];
  m["name"] = package;
  m["version"] = version;
  return m;
}

HttpResponse json_response(int status, const json& body) { return {status, body.dump()}; }

}  // namespace

// -- scenario -----------------------------------------------------------------------

Scenario parse_scenario(const json& doc) {
  if (!doc.is_object()) invalid("scenario must be a JSON object");
  Scenario s;
  s.name = doc.value("name", std::string("unnamed"));
  if (!doc.contains("start") || !doc["start"].is_string()) invalid("missing 'start'");
  auto start = parse_iso8601(doc["start"].get<std::string>());
  if (!start) invalid("'start' is not an ISO-8601 time");
  s.start = *start;
  if (doc.contains("registry")) {
    if (!doc["registry"].is_string()) invalid("'registry' must be a string");
    s.registry = doc["registry"].get<std::string>();
    while (!s.registry.empty() && s.registry.back() == '/') s.registry.pop_back();
  }
  if (doc.contains("metrics_budget")) {
    const auto& b = doc["metrics_budget"];
    if (!b.is_object()) invalid("'metrics_budget' must be an object");
    RateBudget budget;
    budget.requests_per_interval = b.value("requests_per_interval", 1);
    if (b.contains("interval")) budget.interval = json_duration(b["interval"], "metrics_budget.interval");
    budget.batch_size = b.value("batch_size", 128);
    try {
      budget.validate();
    } catch (const Error& e) {
      invalid(std::string("metrics_budget: ") + e.what());
    }
    s.metrics_budget = budget;
  }
  if (!doc.contains("events") || !doc["events"].is_array()) invalid("missing 'events' array");
  Millis last{0};
  std::size_t index = 0;
  for (const auto& e : doc["events"]) {
    if (!e.is_object()) invalid("event " + std::to_string(index) + " is not an object");
    ScenarioEvent ev;
    ev.type = require_string(e, "type", index);
    if (!kEventTypes.count(ev.type)) invalid("event " + std::to_string(index) + ": unknown type '" + ev.type + "'");
    ev.at = e.contains("at") ? json_duration(e["at"], "at") : last;
    if (ev.at < last) invalid("event " + std::to_string(index) + ": 'at' goes backwards");
    if (ev.at.count() < 0) invalid("event " + std::to_string(index) + ": negative 'at'");
    last = ev.at;
    if (ev.type == "publish" || ev.type == "delete_version" || ev.type == "tarball_gone") {
      require_string(e, "package", index);
      auto v = require_string(e, "version", index);
      if (ev.type == "publish" && e.contains("tarball") && !e["tarball"].is_string())
        invalid("event " + std::to_string(index) + ": 'tarball' must be a string");
      if (ev.type == "publish" && e.contains("tarball_size") &&
          !(e["tarball_size"].is_number_integer() && e["tarball_size"].get<std::int64_t>() >= 0))
        invalid("event " + std::to_string(index) + ": 'tarball_size' must be a non-negative integer");
    } else if (ev.type == "delete_package" || ev.type == "raw_change") {
      require_string(e, "package", index);
    } else if (ev.type == "advisory") {
      if (!e.contains("doc") || !e["doc"].is_object() || !e["doc"].contains("id") || !e["doc"]["id"].is_string())
        invalid("event " + std::to_string(index) + ": advisory needs a 'doc' with a string 'id'");
    } else if (ev.type == "withdraw_advisory") {
      require_string(e, "id", index);
    } else if (ev.type == "metric") {
      require_string(e, "package", index);
      auto week = require_string(e, "week_start", index);
      if (!parse_iso8601(week)) invalid("event " + std::to_string(index) + ": bad 'week_start'");
      if (!e.contains("downloads") || !e["downloads"].is_number_integer())
        invalid("event " + std::to_string(index) + ": 'downloads' must be an integer");
    } else if (ev.type == "fault") {
      auto ep = require_string(e, "endpoint", index);
      if (!kEndpoints.count(ep)) invalid("event " + std::to_string(index) + ": unknown endpoint '" + ep + "'");
      if (!e.contains("status") || !e["status"].is_number_integer())
        invalid("event " + std::to_string(index) + ": fault needs an integer 'status'");
    }
    ev.body = e;
    s.events.push_back(std::move(ev));
    ++index;
  }
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::scenario_invalid, "cannot read scenario " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  auto j = json::parse(buf.str(), nullptr, false);
  if (j.is_discarded()) throw Error(Errc::scenario_invalid, path.string() + " is not valid JSON");
  return parse_scenario(j);
}

std::string scenario_tarball_bytes(const std::string& package, const std::string& version, const json& e) {
  if (e.contains("tarball") && e["tarball"].is_string()) return e["tarball"].get<std::string>();
  const std::size_t size = e.value("tarball_size", std::size_t{256});
  std::mt19937_64 rng(std::stoull(sha256_hex(package + "@" + version).substr(0, 16), nullptr, 16));
  std::string out(size, '\0');
  for (std::size_t i = 0; i < size; i += 8) {
    auto word = rng();
    for (std::size_t b = 0; b < 8 && i + b < size; ++b) out[i + b] = char((word >> (8 * b)) & 0xff);
  }
  return out;
}

std::string scenario_tarball_url(const std::string& registry, const std::string& package, const std::string& version) {
  return registry + "/" + url_encode(package) + "/-/" + basename_of(package) + "-" + version + ".tgz";
}

// -- mock registry ------------------------------------------------------------------

MockRegistry::MockRegistry(const Scenario& scenario, Clock& clock)
    : scenario_(scenario), clock_(clock), base_(scenario.registry) {}

void MockRegistry::set_base_url(std::string base) {
  std::lock_guard lock(mu_);
  base_ = std::move(base);
}

void MockRegistry::sync() {
  std::lock_guard lock(mu_);
  const auto now = clock_.now();
  while (next_event_ < scenario_.events.size() && scenario_.start + scenario_.events[next_event_].at <= now)
    apply_locked(scenario_.events[next_event_++]);
}

void MockRegistry::apply_locked(const ScenarioEvent& ev) {
  const json& e = ev.body;
  const TimePoint at = scenario_.start + ev.at;
  if (ev.type == "publish") {
    const auto name = e["package"].get<std::string>();
    const auto version = e["version"].get<std::string>();
    auto& pkg = packages_[name];
    const auto seq = ++seq_;
    pkg.deleted = false;
    if (!pkg.created) pkg.created = at;
    for (auto& v : pkg.versions)
      if (v.version == version && v.removed_at < 0) v.removed_at = seq;
    VersionEntry entry;
    entry.version = version;
    entry.manifest = publish_manifest(name, version, e);
    entry.published_at = at;
    if (e.contains("time") && e["time"].is_string())
      if (auto t = parse_iso8601(e["time"].get<std::string>())) entry.published_at = *t;
    entry.added_at = seq;
    if (e.contains("tarball_delay")) entry.tarball_delay = json_duration(e["tarball_delay"], "tarball_delay");
    entry.bytes = scenario_tarball_bytes(name, version, e);
    entry.integrity = "sha256-" + sha256_hex(entry.bytes);
    pkg.versions.push_back(std::move(entry));
    changes_.push_back({seq, name, false, std::nullopt});
  } else if (ev.type == "delete_version") {
    auto it = packages_.find(e["package"].get<std::string>());
    if (it == packages_.end()) return;
    const auto version = e["version"].get<std::string>();
    auto listed = std::find_if(it->second.versions.begin(), it->second.versions.end(),
                               [&](const VersionEntry& v) { return v.version == version && v.removed_at < 0; });
    if (listed == it->second.versions.end()) return;
    listed->removed_at = ++seq_;
    changes_.push_back({seq_, it->first, false, std::nullopt});
  } else if (ev.type == "delete_package") {
    auto& pkg = packages_[e["package"].get<std::string>()];
    const auto seq = ++seq_;
    pkg.deleted = true;
    for (auto& v : pkg.versions)
      if (v.removed_at < 0) v.removed_at = seq;
    changes_.push_back({seq, e["package"].get<std::string>(), true, std::nullopt});
  } else if (ev.type == "tarball_gone") {
    auto it = packages_.find(e["package"].get<std::string>());
    if (it == packages_.end()) return;
    for (auto& v : it->second.versions)
      if (v.version == e["version"]) v.tarball_gone = true;
  } else if (ev.type == "raw_change") {
    changes_.push_back({++seq_, e["package"].get<std::string>(), false, e.value("doc", json())});
  } else if (ev.type == "advisory") {
    json doc = e["doc"];
    if (!doc.contains("modified")) doc["modified"] = format_iso8601(at);
    const auto id = doc["id"].get<std::string>();
    advisories_[id] = std::move(doc);
  } else if (ev.type == "withdraw_advisory") {
    auto it = advisories_.find(e["id"].get<std::string>());
    if (it == advisories_.end()) return;
    it->second["withdrawn"] = format_iso8601(at);
    it->second["modified"] = format_iso8601(at);
  } else if (ev.type == "metric") {
    metrics_[e["package"].get<std::string>()] = {e["week_start"].get<std::string>(), e["downloads"].get<std::int64_t>()};
  } else if (ev.type == "fault") {
    Fault f;
    f.endpoint = e["endpoint"].get<std::string>();
    if (e.contains("package") && e["package"].is_string()) f.package = e["package"].get<std::string>();
    if (e.contains("version") && e["version"].is_string()) f.version = e["version"].get<std::string>();
    f.status = e["status"].get<int>();
    f.remaining = e.value("count", 1);
    faults_.push_back(std::move(f));
  }
}

json MockRegistry::render_doc_locked(const std::string& package, std::int64_t seq) {
  const auto& pkg = packages_.at(package);
  json doc = {{"_id", package}, {"name", package}};
  json versions = json::object();
  json time = json::object();
  const VersionEntry* latest = nullptr;
  TimePoint modified = pkg.created.value_or(scenario_.start);
  for (const auto& v : pkg.versions) {
    if (v.added_at > seq || (v.removed_at >= 0 && v.removed_at <= seq)) continue;
    json m = v.manifest;
    m["dist"] = {{"tarball", scenario_tarball_url(base_, package, v.version)}, {"integrity", v.integrity}};
    versions[v.version] = std::move(m);
    time[v.version] = format_iso8601(v.published_at);
    modified = std::max(modified, v.published_at);
    latest = &v;
  }
  if (pkg.created) time["created"] = format_iso8601(*pkg.created);
  time["modified"] = format_iso8601(modified);
  doc["versions"] = std::move(versions);
  doc["time"] = std::move(time);
  doc["dist-tags"] = latest ? json{{"latest", latest->version}} : json::object();
  return doc;
}

std::optional<int> MockRegistry::take_fault_locked(std::string_view endpoint, const std::string& package,
                                                   const std::string& version) {
  for (auto& f : faults_) {
    if (f.remaining <= 0 || f.endpoint != endpoint) continue;
    if (f.package && *f.package != package) continue;
    if (f.version && *f.version != version) continue;
    --f.remaining;
    return f.status;
  }
  return std::nullopt;
}

HttpResponse MockRegistry::get(const std::string& url) {
  auto parsed = parse_url(url);
  if (!parsed) return {400, R"({"error":"bad url"})"};
  return handle(parsed->target);
}

HttpResponse MockRegistry::handle(const std::string& target) {
  sync();
  const auto qpos = target.find('?');
  const std::string path = target.substr(0, qpos);
  const std::string query = qpos == std::string::npos ? "" : target.substr(qpos + 1);
  static const std::string kMetricsPrefix = "/downloads/point/last-week/";

  Millis delay{0};
  HttpResponse resp;
  {
    std::lock_guard lock(mu_);
    ++served_;
    if (path == "/_changes") {
      resp = changes_locked(query);
    } else if (path.starts_with(kMetricsPrefix)) {
      resp = metrics_locked(std::string_view(path).substr(kMetricsPrefix.size()));
    } else if (path == "/advisories") {
      resp = advisories_locked(query);
    } else if (auto sep = path.find("/-/"); sep != std::string::npos) {
      const auto package = url_decode(path.substr(1, sep - 1));
      const auto file = path.substr(sep + 3);
      const auto base = basename_of(package);
      std::string version;
      if (file.size() > base.size() + 5 && file.starts_with(base + "-") && file.ends_with(".tgz"))
        version = file.substr(base.size() + 1, file.size() - base.size() - 5);
      auto it = packages_.find(package);
      const VersionEntry* entry = nullptr;
      if (it != packages_.end())
        for (const auto& v : it->second.versions)
          if (v.version == version && (!entry || v.added_at > entry->added_at)) entry = &v;
      if (!entry) {
        resp = json_response(404, {{"error", "not found"}});
      } else if (auto fault = take_fault_locked("tarball", package, version)) {
        resp = json_response(*fault, {{"error", "injected fault"}});
      } else if (entry->removed_at >= 0 || entry->tarball_gone) {
        resp = json_response(404, {{"error", "not found"}});
      } else {
        resp = {200, entry->bytes};
        delay = entry->tarball_delay;
      }
    } else {
      resp = json_response(404, {{"error", "not found"}});
    }
  }
  if (delay.count() > 0) clock_.sleep_for(delay);
  return resp;
}

HttpResponse MockRegistry::changes_locked(std::string_view query) {
  if (auto fault = take_fault_locked("changes", "", "")) return json_response(*fault, {{"error", "injected fault"}});
  std::int64_t since = 0;
  std::int64_t limit = 1000;
  try {
    if (auto s = query_param(query, "since")) {
      std::size_t used = 0;
      since = std::stoll(*s, &used);
      if (used != s->size()) throw std::invalid_argument("since");
    }
    if (auto l = query_param(query, "limit")) limit = std::stoll(*l);
  } catch (const std::exception&) {
    return json_response(400, {{"error", "bad_request"}, {"reason", "invalid since or limit"}});
  }
  if (limit <= 0) return json_response(400, {{"error", "bad_request"}, {"reason", "limit must be positive"}});
  const bool include_docs = query_param(query, "include_docs").value_or("false") == "true";
  json results = json::array();
  auto it = std::upper_bound(changes_.begin(), changes_.end(), since,
                             [](std::int64_t s, const Change& c) { return s < c.seq; });
  std::int64_t last = since;
  for (; it != changes_.end() && std::int64_t(results.size()) < limit; ++it) {
    json row = {{"seq", it->seq}, {"id", it->package}, {"changes", json::array({{{"rev", std::to_string(it->seq)}}})}};
    if (it->deleted) {
      row["deleted"] = true;
    } else if (include_docs) {
      row["doc"] = it->raw ? *it->raw : render_doc_locked(it->package, it->seq);
    }
    results.push_back(std::move(row));
    last = it->seq;
  }
  return json_response(200, {{"results", std::move(results)}, {"last_seq", last}});
}

HttpResponse MockRegistry::metrics_locked(std::string_view names_part) {
  const auto now = clock_.now();
  metrics_requests_.push_back(now);
  if (scenario_.metrics_budget) {
    const auto& b = *scenario_.metrics_budget;
    auto in_window = std::count_if(metrics_requests_.begin(), metrics_requests_.end(),
                                   [&](TimePoint t) { return t > now - b.interval && t <= now; });
    if (in_window > b.requests_per_interval) {
      ++violations_;
      log_event(LogLevel::warn, "mock.budget_violation", {{"at", format_iso8601(now)}, {"in_window", in_window}});
    }
  }
  std::vector<std::string> names;
  std::string_view rest = names_part;
  while (!rest.empty()) {
    auto comma = rest.find(',');
    names.push_back(url_decode(rest.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  if (auto fault = take_fault_locked("metrics", names.empty() ? "" : names.front(), ""))
    return json_response(*fault, {{"error", "injected fault"}});
  if (names.empty()) return json_response(400, {{"error", "no packages requested"}});
  const int max_batch = scenario_.metrics_budget ? scenario_.metrics_budget->batch_size : 128;
  if (int(names.size()) > max_batch) return json_response(400, {{"error", "too many packages in bulk request"}});
  if (names.size() > 1)
    for (const auto& n : names)
      if (n.find('/') != std::string::npos) return json_response(400, {{"error", "scoped packages not supported in bulk"}});

  auto record = [&](const std::string& n) -> json {
    auto it = metrics_.find(n);
    if (it == metrics_.end()) return nullptr;
    auto start = parse_iso8601(it->second.first).value_or(scenario_.start);
    return {{"downloads", it->second.second},
            {"start", format_date(start)},
            {"end", format_date(start + std::chrono::days{6})},
            {"package", n}};
  };
  if (names.size() == 1) {
    auto r = record(names.front());
    if (r.is_null()) return json_response(404, {{"error", "package " + names.front() + " not found"}});
    return json_response(200, r);
  }
  json body = json::object();
  for (const auto& n : names) body[n] = record(n);
  return json_response(200, body);
}

HttpResponse MockRegistry::advisories_locked(std::string_view query) {
  if (auto fault = take_fault_locked("advisories", "", "")) return json_response(*fault, {{"error", "injected fault"}});
  std::optional<TimePoint> since;
  if (auto s = query_param(query, "since")) {
    since = parse_iso8601(*s);
    if (!since) return json_response(400, {{"error", "invalid since"}});
  }
  json out = json::array();
  for (const auto& [id, doc] : advisories_) {
    auto modified = parse_iso8601(doc.value("modified", std::string()));
    if (since && modified && *modified < *since) continue;
    out.push_back(doc);
  }
  return json_response(200, out);
}

std::vector<TimePoint> MockRegistry::metrics_requests() {
  std::lock_guard lock(mu_);
  return metrics_requests_;
}

std::size_t MockRegistry::budget_violations() {
  std::lock_guard lock(mu_);
  return violations_;
}

std::size_t MockRegistry::requests_served() {
  std::lock_guard lock(mu_);
  return served_;
}

std::int64_t MockRegistry::last_seq() {
  std::lock_guard lock(mu_);
  return seq_;
}

void MockRegistry::write_advisories(const std::filesystem::path& dir) {
  sync();
  std::lock_guard lock(mu_);
  std::filesystem::create_directories(dir);
  for (const auto& [id, doc] : advisories_) {
    std::string file = id;
    for (auto& c : file)
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
    std::ofstream(dir / (file + ".json")) << doc.dump(2) << '\n';
  }
}

// -- HTTP server ---------------------------------------------------------------------

struct ReplayServer::Impl {
  httplib::Server server;
  std::thread thread;
};

ReplayServer::ReplayServer(MockRegistry& registry, int port) : impl_(std::make_unique<Impl>()) {
  impl_->server.Get(".*", [&registry](const httplib::Request& req, httplib::Response& res) {
    auto r = registry.handle(req.target);
    res.status = r.status;
    const bool binary = r.status == 200 && req.path.ends_with(".tgz");
    res.set_content(r.body, binary ? "application/octet-stream" : "application/json");
  });
  port_ = port == 0 ? impl_->server.bind_to_any_port("127.0.0.1")
                    : (impl_->server.bind_to_port("127.0.0.1", port) ? port : -1);
  if (port_ <= 0) throw Error(Errc::io_failure, "replay server cannot bind port " + std::to_string(port));
  registry.set_base_url(base_url());
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

ReplayServer::~ReplayServer() { stop(); }

void ReplayServer::wait() {
  if (impl_->thread.joinable()) impl_->thread.join();
}

void ReplayServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

// -- oracle ------------------------------------------------------------------------

std::size_t ScenarioOracle::deleted_rows() const {
  return std::size_t(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.deleted; }));
}

std::set<std::tuple<std::string, std::string, std::string>> ScenarioOracle::impact(
    std::optional<std::int64_t> min_downloads, bool require_tests) const {
  std::set<std::string> published;
  for (const auto& r : rows) published.insert(r.package);
  std::set<std::tuple<std::string, std::string, std::string>> out;
  for (const auto& vuln : advised_packages) {
    if (!published.count(vuln)) continue;
    if (min_downloads) {
      auto it = latest_downloads.find(vuln);
      if (it == latest_downloads.end() || it->second <= *min_downloads) continue;
    }
    for (const auto& r : rows) {
      if (r.superseded || !r.runtime_deps.count(vuln)) continue;
      if (require_tests && !r.has_test_script) continue;
      out.emplace(r.package, r.version, vuln);
    }
  }
  return out;
}

ScenarioOracle oracle(const Scenario& scenario, int max_attempts) {
  ScenarioOracle o;
  struct Live {
    std::size_t row;
    json content;
  };
  std::map<std::string, std::map<std::string, Live>> current;  // package -> version -> newest row
  std::map<std::string, std::set<std::string>> listed;          // what the registry document lists
  std::map<std::string, std::set<std::string>> advisory_packages;
  std::set<std::string> withdrawn;

  auto event_content = [](const json& e) {
    json c = e;
    for (const char* f : {"at", "type", "tarball_delay", "time"}) c.erase(f);
    return c;
  };
  auto doomed = [&](std::size_t from, const std::string& pkg, const std::string& ver) {
    // A download fails for good when a scripted 404, or enough transient
    // faults to exhaust retries, target the tarball.
    for (std::size_t j = 0; j < scenario.events.size(); ++j) {
      const auto& e = scenario.events[j].body;
      if (scenario.events[j].type == "fault" && e["endpoint"] == "tarball" && j <= from &&
          e.value("package", pkg) == pkg && e.value("version", ver) == ver &&
          (e["status"] == 404 || e.value("count", 1) >= max_attempts))
        return true;
      if (j > from && scenario.events[j].at == scenario.events[from].at &&
          (scenario.events[j].type == "tarball_gone" || scenario.events[j].type == "delete_version") &&
          e["package"] == pkg && e.value("version", ver) == ver)
        return true;
      if (j > from && scenario.events[j].at == scenario.events[from].at && scenario.events[j].type == "delete_package" &&
          e["package"] == pkg)
        return true;
    }
    return false;
  };

  for (std::size_t i = 0; i < scenario.events.size(); ++i) {
    const auto& ev = scenario.events[i];
    const json& e = ev.body;
    if (ev.type == "publish") {
      const auto pkg = e["package"].get<std::string>();
      const auto ver = e["version"].get<std::string>();
      o.deleted_packages.erase(pkg);
      auto& lst = listed[pkg];
      lst.insert(ver);
      auto& cur = current[pkg];
      for (auto& [v, live] : cur)
        if (!lst.count(v)) o.rows[live.row].deleted = true;
      auto content = event_content(e);
      auto it = cur.find(ver);
      if (it != cur.end() && !o.rows[it->second.row].deleted && it->second.content == content) continue;
      ExpectedVersionRow row;
      row.package = pkg;
      row.version = ver;
      if (it != cur.end()) {
        o.rows[it->second.row].superseded = true;
        row.generation = o.rows[it->second.row].generation + 1;
      }
      json manifest = e.value("manifest", json::object());
      json scripts = e.contains("scripts") ? e["scripts"] : manifest.value("scripts", json());
      row.has_test_script = scripts.is_object() && scripts.contains("test") && !scripts["test"].is_null();
      json deps = e.contains("dependencies") ? e["dependencies"] : manifest.value("dependencies", json());
      if (deps.is_object())
        for (auto& [name, _] : deps.items()) row.runtime_deps.insert(name);
      o.rows.push_back(std::move(row));
      cur[ver] = {o.rows.size() - 1, std::move(content)};
      if (!doomed(i, pkg, ver)) o.blobs.emplace(std::pair{pkg, ver}, scenario_tarball_bytes(pkg, ver, e));
    } else if (ev.type == "delete_version") {
      const auto pkg = e["package"].get<std::string>();
      const auto ver = e["version"].get<std::string>();
      if (!listed[pkg].erase(ver)) continue;
      o.rows[current[pkg][ver].row].deleted = true;
    } else if (ev.type == "delete_package") {
      const auto pkg = e["package"].get<std::string>();
      o.deleted_packages.insert(pkg);
      listed[pkg].clear();
    } else if (ev.type == "advisory") {
      const auto& doc = e["doc"];
      auto& names = advisory_packages[doc["id"].get<std::string>()];
      names.clear();
      if (doc.contains("withdrawn") && !doc["withdrawn"].is_null()) withdrawn.insert(doc["id"].get<std::string>());
      for (const auto& aff : doc.value("affected", json::array())) {
        if (!aff.contains("package")) continue;
        const auto& p = aff["package"];
        if (p.value("ecosystem", std::string("npm")) != "npm" || !p.contains("name")) continue;
        bool has_range = aff.contains("versions") && !aff["versions"].empty();
        for (const auto& r : aff.value("ranges", json::array()))
          if (!r.value("events", json::array()).empty()) has_range = true;
        if (has_range) names.insert(p["name"].get<std::string>());
      }
    } else if (ev.type == "withdraw_advisory") {
      withdrawn.insert(e["id"].get<std::string>());
    } else if (ev.type == "metric") {
      o.latest_downloads[e["package"].get<std::string>()] = e["downloads"].get<std::int64_t>();
    }
  }
  for (const auto& [id, names] : advisory_packages)
    if (!withdrawn.count(id)) o.advised_packages.insert(names.begin(), names.end());
  return o;
}

// -- simulation ----------------------------------------------------------------------

Simulation::Simulation(const Scenario& scenario, SimulationOptions options)
    : scenario_(scenario), opts_(std::move(options)), clock_(scenario.start) {
  registry_ = std::make_unique<MockRegistry>(scenario_, clock_);
  store_ = std::make_unique<MetadataStore>(opts_.store_path);
  if (opts_.archive_tarballs) {
    if (opts_.blob_root.empty()) throw Error(Errc::invalid_argument, "simulation needs a blob root");
    BlobManager::Options bo;
    bo.root = opts_.blob_root;
    bo.segment_size = opts_.segment_size;
    bo.fsync = false;
    blobs_ = std::make_unique<BlobManager>(bo, clock_);
  }
  queue_ = std::make_unique<DownloadQueue>(*store_, clock_, opts_.retry);
  feed_ = std::make_unique<HttpChangesFeed>(*registry_, scenario_.registry);
  ingestor_ = std::make_unique<Ingestor>(*store_, *feed_, opts_.archive_tarballs ? queue_.get() : nullptr, clock_);
}

Simulation::~Simulation() = default;

void Simulation::ingest() {
  for (int attempt = 0;; ++attempt) {
    try {
      ingestor_->run_until_drained(opts_.poll_limit);
      return;
    } catch (const Error& e) {
      if (e.code() != Errc::feed_unavailable || attempt >= 100) throw;
      clock_.sleep_for(std::chrono::seconds{1});
    }
  }
}

void Simulation::download() {
  if (opts_.archive_tarballs) drain_queue(*queue_, "sim-worker", *registry_, *blobs_, opts_.blob_root);
}

void Simulation::run() {
  std::size_t i = 0;
  while (i < scenario_.events.size()) {
    const auto at = scenario_.events[i].at;
    while (i < scenario_.events.size() && scenario_.events[i].at == at) ++i;
    clock_.advance_to(scenario_.start + at);
    registry_->sync();
    ingest();
    download();
  }
  ingest();
  while (opts_.archive_tarballs && queue_->pending() > 0) {
    if (auto due = queue_->next_due()) clock_.advance_to(*due);
    download();
  }
  if (opts_.sync_advisories) AdvisoryScraper(*store_, *registry_, scenario_.registry).sync();
  if (opts_.sweep_metrics) {
    MetricsScraper scraper(*store_, *registry_, clock_, scenario_.registry, scenario_.metrics_budget.value_or(RateBudget{}));
    sweep_ = scraper.sweep();
  }
}

}  // namespace follower
