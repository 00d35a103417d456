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

#include "follower/changes.h"

#include <algorithm>
#include <set>

#include "follower/blob_store.h"
#include "follower/digest.h"
#include "follower/download.h"
#include "follower/errors.h"
#include "follower/json_log.h"

namespace follower {

using nlohmann::json;

namespace {

constexpr std::pair<const char*, DependencyKind> kDependencyMaps[] = {
    {"dependencies", DependencyKind::runtime},
    {"devDependencies", DependencyKind::dev},
    {"peerDependencies", DependencyKind::peer},
    {"optionalDependencies", DependencyKind::optional},
};

std::string seq_string(const json& seq) {
  if (seq.is_string()) return seq.get<std::string>();
  if (seq.is_number_integer() || seq.is_number_unsigned()) return seq.dump();
  throw Error(Errc::invalid_doc, "seq must be a string or integer");
}

std::string strip_suffix(std::string s, std::string_view suffix) {
  if (s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0)
    s.resize(s.size() - suffix.size());
  return s;
}

std::optional<RepositoryInfo> owner_and_name(std::string host, std::string_view path) {
  while (!path.empty() && path.front() == '/') path.remove_prefix(1);
  auto slash = path.find('/');
  if (slash == std::string_view::npos) return std::nullopt;
  std::string owner(path.substr(0, slash));
  std::string_view rest = path.substr(slash + 1);
  auto end = rest.find_first_of("/#?");
  std::string name = strip_suffix(std::string(rest.substr(0, end)), ".git");
  if (host.empty() || owner.empty() || name.empty()) return std::nullopt;
  return RepositoryInfo{std::move(host), std::move(owner), std::move(name)};
}

}  // namespace

std::optional<RepositoryInfo> parse_repository(const json& repository) {
  std::string url;
  if (repository.is_string()) {
    url = repository.get<std::string>();
  } else if (repository.is_object() && repository.contains("url") && repository["url"].is_string()) {
    url = repository["url"].get<std::string>();
  } else {
    return std::nullopt;
  }
  static const std::pair<std::string_view, std::string_view> shorthands[] = {
      {"github:", "github.com"}, {"gitlab:", "gitlab.com"}, {"bitbucket:", "bitbucket.org"}};
  for (auto [prefix, host] : shorthands)
    if (url.starts_with(prefix)) return owner_and_name(std::string(host), std::string_view(url).substr(prefix.size()));

  if (url.starts_with("git+")) url.erase(0, 4);
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    // scp-like "git@github.com:owner/name.git"
    auto at = url.find('@');
    auto colon = url.find(':');
    if (at != std::string::npos && colon != std::string::npos && at < colon)
      return owner_and_name(url.substr(at + 1, colon - at - 1), std::string_view(url).substr(colon + 1));
    // "owner/name" shorthand
    if (std::count(url.begin(), url.end(), '/') == 1 && url.find(':') == std::string::npos &&
        url.find(' ') == std::string::npos)
      return owner_and_name("github.com", url);
    return std::nullopt;
  }
  std::string_view rest = std::string_view(url).substr(scheme_end + 3);
  auto path_start = rest.find('/');
  if (path_start == std::string_view::npos) return std::nullopt;
  std::string_view authority = rest.substr(0, path_start);
  if (auto at = authority.rfind('@'); at != std::string_view::npos) authority.remove_prefix(at + 1);
  if (auto colon = authority.find(':'); colon != std::string_view::npos) authority = authority.substr(0, colon);
  std::string host(authority);
  if (host.starts_with("www.")) host.erase(0, 4);
  return owner_and_name(host, rest.substr(path_start));
}

VersionManifest parse_manifest(const std::string& package_name, const std::string& version_key,
                               const json& manifest, const json& time) {
  if (!manifest.is_object()) throw Error(Errc::invalid_doc, "manifest for " + version_key + " is not an object");
  VersionManifest m;
  m.package_name = package_name;
  m.version_string = version_key;
  m.version = semver::parse_version(version_key);
  m.digest = sha256_hex(manifest.dump());
  m.extra_metadata = manifest;
  m.extra_metadata.erase("name");
  m.extra_metadata.erase("version");

  for (auto [field, kind] : kDependencyMaps) {
    auto it = manifest.find(field);
    if (it == manifest.end() || !it->is_object()) continue;
    for (auto& [dep_name, value] : it->items()) {
      DependencySpec d;
      d.name = dep_name;
      d.kind = kind;
      if (value.is_string()) {
        d.constraint_raw = value.get<std::string>();
        d.constraint = semver::try_parse_constraint(d.constraint_raw);
      } else {
        d.constraint_raw = value.dump();
      }
      m.dependencies.push_back(std::move(d));
    }
    m.extra_metadata.erase(field);
  }

  if (auto dist = manifest.find("dist"); dist != manifest.end() && dist->is_object()) {
    if (auto tb = dist->find("tarball"); tb != dist->end() && tb->is_string()) m.tarball_url = tb->get<std::string>();
  }
  if (auto repo = manifest.find("repository"); repo != manifest.end()) {
    m.repository = parse_repository(*repo);
    if (m.repository) m.extra_metadata.erase("repository");
  }
  if (time.is_object()) {
    if (auto t = time.find(version_key); t != time.end() && t->is_string()) m.published_at = parse_iso8601(t->get<std::string>());
  }
  return m;
}

ChangesPage parse_changes_page(const std::string& body, const std::string& cursor) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("results") || !j["results"].is_array())
    throw Error(Errc::invalid_doc, "malformed _changes response");
  ChangesPage page;
  page.next_cursor = cursor;
  for (const auto& r : j["results"]) {
    if (!r.is_object() || !r.contains("seq") || !r.contains("id") || !r["id"].is_string())
      throw Error(Errc::invalid_doc, "malformed _changes row");
    ChangeEvent e;
    e.seq = seq_string(r["seq"]);
    e.package_name = r["id"].get<std::string>();
    e.deleted = r.value("deleted", false);
    if (!e.deleted && r.contains("doc") && !r["doc"].is_null()) e.doc = r["doc"];
    page.next_cursor = e.seq;
    page.events.push_back(std::move(e));
  }
  if (j.contains("last_seq") && !j["last_seq"].is_null()) page.next_cursor = seq_string(j["last_seq"]);
  return page;
}

ChangesPage HttpChangesFeed::poll(const std::string& cursor, int limit) {
  auto url = base_ + "/_changes?since=" + url_encode(cursor) + "&limit=" + std::to_string(limit) + "&include_docs=true";
  auto resp = http_.get(url);
  if (resp.status == 400 || resp.status == 410)
    throw Error(Errc::cursor_expired, "feed rejected cursor " + cursor + " (HTTP " + std::to_string(resp.status) + ")");
  if (!resp.ok())
    throw Error(Errc::feed_unavailable, "feed returned HTTP " + std::to_string(resp.status));
  try {
    return parse_changes_page(resp.body, cursor);
  } catch (const Error& e) {
    throw Error(Errc::feed_unavailable, e.what());
  }
}

NormalizedUpdate normalize(const ChangeEvent& event, const std::optional<PackageState>& known) {
  NormalizedUpdate u;
  u.package_name = event.package_name;
  if (event.deleted) {
    u.package_deleted = !known || !known->deleted;
    u.unchanged = !u.package_deleted;
    return u;
  }
  if (!event.doc || !event.doc->is_object()) throw Error(Errc::invalid_doc, "document missing or not an object");
  const json& doc = *event.doc;
  static const json kEmpty = json::object();
  const json* versions = &kEmpty;
  if (auto it = doc.find("versions"); it != doc.end() && !it->is_null()) {
    if (!it->is_object()) throw Error(Errc::invalid_doc, "versions is not an object");
    versions = &*it;
  }
  const json time = doc.value("time", json());

  u.package_undeleted = known && known->deleted;
  std::set<std::string> listed;
  for (auto& [key, manifest] : versions->items()) {
    listed.insert(key);
    VersionManifest m;
    try {
      m = parse_manifest(event.package_name, key, manifest, time);
    } catch (const Error& e) {
      throw Error(Errc::invalid_doc, "version " + key + ": " + e.what());
    }
    const StoredVersion* stored = known ? known->find(key) : nullptr;
    if (!stored || stored->deleted || stored->digest != m.digest) u.new_versions.push_back(std::move(m));
  }
  if (known) {
    for (const auto& v : known->versions)
      if (!v.deleted && !listed.count(v.version)) u.removed_versions.push_back(v.version);
  }
  u.unchanged = u.new_versions.empty() && u.removed_versions.empty() && !u.package_undeleted;
  return u;
}

ApplySummary apply(MetadataStore& store, DownloadQueue* queue, const NormalizedUpdate& u, TimePoint now,
                   const std::string& feed, const std::string& seq) {
  ApplySummary s;
  store.transact([&] {
    if (u.unchanged) {
      store.set_cursor(feed, seq);
      return;
    }
    auto pkg = store.upsert_package(u.package_name, seq);
    if (u.package_deleted) s.package_flag_changed = store.set_package_deleted(pkg, true, now);
    if (u.package_undeleted) s.package_flag_changed = store.set_package_deleted(pkg, false, now);
    for (const auto& m : u.new_versions) {
      auto r = store.upsert_version(pkg, m, now);
      if (!r.inserted) continue;
      ++s.versions_inserted;
      if (r.superseded_id) ++s.versions_superseded;
      s.dependency_rows += store.upsert_dependencies(r.id, m.dependencies);
      if (queue && m.tarball_url) {
        auto job = queue->enqueue(make_blob_key(u.package_name, m.version_string, *m.tarball_url), *m.tarball_url, r.id);
        if (job.created) ++s.jobs_enqueued;
      }
    }
    for (const auto& v : u.removed_versions)
      if (store.flag_version_deleted(pkg, v, now)) ++s.versions_flagged;
    store.set_cursor(feed, seq);
  });
  return s;
}

// -- Ingestor -------------------------------------------------------------------

Ingestor::Ingestor(MetadataStore& store, ChangesFeed& feed, DownloadQueue* queue, Clock& clock, std::string feed_name,
                   std::string start_cursor)
    : store_(store),
      feed_(feed),
      queue_(queue),
      clock_(clock),
      feed_name_(std::move(feed_name)),
      start_cursor_(std::move(start_cursor)) {}

std::string Ingestor::cursor() { return store_.cursor(feed_name_).value_or(start_cursor_); }

std::size_t Ingestor::step(int limit) {
  auto from = cursor();
  ChangesPage page;
  try {
    page = feed_.poll(from, limit);
  } catch (const Error& e) {
    if (e.code() != Errc::cursor_expired) throw;
    log_event(LogLevel::warn, "ingest.resync", {{"feed", feed_name_}, {"seq", from}, {"message", e.what()}});
    ++stats_.resyncs;
    store_.set_cursor(feed_name_, start_cursor_);
    page = feed_.poll(start_cursor_, limit);
  }
  for (const auto& e : page.events) handle(e);
  if (page.events.empty() && page.next_cursor != from) store_.set_cursor(feed_name_, page.next_cursor);
  else if (!page.events.empty() && page.next_cursor != page.events.back().seq)
    store_.set_cursor(feed_name_, page.next_cursor);
  return page.events.size();
}

void Ingestor::run_until_drained(int limit) {
  while (step(limit) > 0) {
  }
}

void Ingestor::handle(const ChangeEvent& e) {
  ++stats_.events;
  const auto now = clock_.now();
  try {
    auto update = normalize(e, store_.load_package_state(e.package_name));
    auto s = apply(store_, queue_, update, now, feed_name_, e.seq);
    stats_.totals.versions_inserted += s.versions_inserted;
    stats_.totals.versions_superseded += s.versions_superseded;
    stats_.totals.versions_flagged += s.versions_flagged;
    stats_.totals.dependency_rows += s.dependency_rows;
    stats_.totals.jobs_enqueued += s.jobs_enqueued;
    if (s.writes() > 0)
      log_event(LogLevel::debug, "ingest.apply",
                {{"seq", e.seq},
                 {"package", e.package_name},
                 {"inserted", s.versions_inserted},
                 {"flagged", s.versions_flagged},
                 {"jobs", s.jobs_enqueued}});
  } catch (const Error& err) {
    if (err.code() != Errc::invalid_doc) throw;
    ++stats_.dead_letters;
    log_event(LogLevel::warn, "ingest.dead_letter", {{"seq", e.seq}, {"package", e.package_name}, {"error", err.what()}});
    store_.transact([&] {
      store_.record_dead_letter(feed_name_, e.seq, e.package_name, e.doc ? e.doc->dump() : "null", err.what(), now);
      store_.set_cursor(feed_name_, e.seq);
    });
  }
}

}  // namespace follower
