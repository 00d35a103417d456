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

#include "follower/config.h"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "follower/errors.h"

namespace follower {

using nlohmann::json;

namespace {

enum class Kind { string, integer, duration };

struct Key {
  const char* section;  // nullptr for top-level keys
  const char* name;
  Kind kind;
};

constexpr Key kKeys[] = {
    {"feed", "url", Kind::string},
    {"feed", "name", Kind::string},
    {"feed", "start_cursor", Kind::string},
    {"feed", "poll_limit", Kind::integer},
    {"feed", "poll_interval", Kind::duration},
    {"store", "path", Kind::string},
    {"blob", "root", Kind::string},
    {"blob", "segment_size", Kind::integer},
    {"blob", "manager", Kind::string},
    {"blob", "listen", Kind::string},
    {"blob", "ticket_ttl", Kind::duration},
    {"blob", "capacity", Kind::integer},
    {"metrics", "url", Kind::string},
    {"metrics", "requests_per_interval", Kind::integer},
    {"metrics", "interval", Kind::duration},
    {"metrics", "batch_size", Kind::integer},
    {"advisories", "directory", Kind::string},
    {"advisories", "url", Kind::string},
    {"downloads", "max_attempts", Kind::integer},
    {"downloads", "backoff_base", Kind::duration},
    {"downloads", "backoff_cap", Kind::duration},
    {"downloads", "lease", Kind::duration},
    {nullptr, "sla", Kind::duration},
    {nullptr, "workers", Kind::integer},
};

std::string dotted(const Key& k) { return k.section ? std::string(k.section) + "." + k.name : std::string(k.name); }

std::string env_name(const Key& k) {
  std::string n = "FOLLOWER_";
  if (k.section) n += std::string(k.section) + "_";
  n += k.name;
  for (auto& c : n) c = char(std::toupper(static_cast<unsigned char>(c)));
  return n;
}

[[noreturn]] void bad(const std::string& field, const std::string& why) {
  throw Error(Errc::config_invalid, "config field '" + field + "' " + why);
}

const json* lookup(const json& doc, const Key& k) {
  const json* scope = &doc;
  if (k.section) {
    auto it = doc.find(k.section);
    if (it == doc.end()) return nullptr;
    if (!it->is_object()) bad(k.section, "must be an object");
    scope = &*it;
  }
  auto it = scope->find(k.name);
  return it == scope->end() || it->is_null() ? nullptr : &*it;
}

std::int64_t as_integer(const json& v, const std::string& field) {
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_string()) {
    try {
      std::size_t used = 0;
      auto s = v.get<std::string>();
      auto n = std::stoll(s, &used);
      if (used == s.size()) return n;
    } catch (const std::exception&) {
    }
  }
  bad(field, "must be an integer");
}

Millis as_duration(const json& v, const std::string& field) {
  if (v.is_number()) return Millis{std::int64_t(v.get<double>() * 1000)};
  if (v.is_string())
    if (auto d = parse_duration(v.get<std::string>())) return *d;
  bad(field, "must be a duration such as \"30s\", \"5m\" or \"24h\"");
}

}  // namespace

std::optional<std::string> process_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

void Config::require(std::initializer_list<std::string_view> fields) const {
  for (auto f : fields) {
    bool present = true;
    if (f == "feed.url") present = !feed.url.empty();
    else if (f == "store.path") present = !store.path.empty();
    else if (f == "blob.root") present = !blob.root.empty();
    else if (f == "blob.manager") present = !blob.manager.empty();
    else if (f == "metrics.url") present = !metrics.url.empty();
    else if (f == "advisories") present = !advisories.directory.empty() || !advisories.url.empty();
    if (!present) {
      if (f == "advisories") throw Error(Errc::config_invalid, "missing required config field 'advisories.directory' or 'advisories.url'");
      throw Error(Errc::config_invalid, "missing required config field '" + std::string(f) + "'");
    }
  }
}

Config parse_config(json doc, const EnvLookup& env) {
  if (doc.is_null()) doc = json::object();
  if (!doc.is_object()) throw Error(Errc::config_invalid, "config must be a JSON object");
  for (const auto& k : kKeys) {
    auto v = env(env_name(k));
    if (!v) continue;
    if (k.section) {
      if (!doc.contains(k.section)) doc[k.section] = json::object();
      doc[k.section][k.name] = *v;
    } else {
      doc[k.name] = *v;
    }
  }

  Config c;
  for (const auto& k : kKeys) {
    const json* v = lookup(doc, k);
    if (!v) continue;
    const auto field = dotted(k);
    std::string s;
    std::int64_t n = 0;
    Millis d{0};
    switch (k.kind) {
      case Kind::string:
        if (!v->is_string()) bad(field, "must be a string");
        s = v->get<std::string>();
        break;
      case Kind::integer:
        n = as_integer(*v, field);
        if (n < 0) bad(field, "must not be negative");
        break;
      case Kind::duration:
        d = as_duration(*v, field);
        if (d.count() <= 0) bad(field, "must be positive");
        break;
    }
    if (field == "feed.url") c.feed.url = s;
    else if (field == "feed.name") c.feed.name = s;
    else if (field == "feed.start_cursor") c.feed.start_cursor = s;
    else if (field == "feed.poll_limit") c.feed.poll_limit = int(n);
    else if (field == "feed.poll_interval") c.feed.poll_interval = d;
    else if (field == "store.path") c.store.path = s;
    else if (field == "blob.root") c.blob.root = s;
    else if (field == "blob.segment_size") c.blob.segment_size = std::uint64_t(n);
    else if (field == "blob.manager") c.blob.manager = s;
    else if (field == "blob.listen") c.blob.listen = s;
    else if (field == "blob.ticket_ttl") c.blob.ticket_ttl = d;
    else if (field == "blob.capacity") c.blob.capacity = std::uint64_t(n);
    else if (field == "metrics.url") c.metrics.url = s;
    else if (field == "metrics.requests_per_interval") c.metrics.budget.requests_per_interval = int(n);
    else if (field == "metrics.interval") c.metrics.budget.interval = d;
    else if (field == "metrics.batch_size") c.metrics.budget.batch_size = int(n);
    else if (field == "advisories.directory") c.advisories.directory = s;
    else if (field == "advisories.url") c.advisories.url = s;
    else if (field == "downloads.max_attempts") c.downloads.max_attempts = int(n);
    else if (field == "downloads.backoff_base") c.downloads.backoff_base = d;
    else if (field == "downloads.backoff_cap") c.downloads.backoff_cap = d;
    else if (field == "downloads.lease") c.downloads.lease = d;
    else if (field == "sla") c.sla = d;
    else if (field == "workers") c.workers = int(n);
  }

  if (c.feed.poll_limit <= 0) bad("feed.poll_limit", "must be positive");
  if (c.blob.segment_size == 0) bad("blob.segment_size", "must be positive");
  if (c.metrics.budget.requests_per_interval <= 0) bad("metrics.requests_per_interval", "must be positive");
  if (c.metrics.budget.batch_size <= 0) bad("metrics.batch_size", "must be positive");
  if (c.downloads.max_attempts <= 0) bad("downloads.max_attempts", "must be positive");
  if (c.workers <= 0) bad("workers", "must be positive");
  return c;
}

Config load_config(const std::filesystem::path& path, const EnvLookup& env) {
  json doc = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::config_invalid, "cannot read config file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    doc = json::parse(buf.str(), nullptr, false, true);
    if (doc.is_discarded()) throw Error(Errc::config_invalid, "config file " + path.string() + " is not valid JSON");
  }
  return parse_config(std::move(doc), env);
}

}  // namespace follower
