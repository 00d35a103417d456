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

#include <map>

#include "doctest.h"
#include "follower/config.h"
#include "follower/errors.h"
#include "support.h"

using namespace follower;
using namespace std::chrono_literals;
using nlohmann::json;

namespace {

EnvLookup fake_env(std::map<std::string, std::string> vars) {
  return [vars = std::move(vars)](const std::string& name) -> std::optional<std::string> {
    auto it = vars.find(name);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

const EnvLookup kNoEnv = fake_env({});

std::string failure(const json& doc, const EnvLookup& env = kNoEnv) {
  try {
    parse_config(doc, env);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::config_invalid);
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults") {
  auto c = parse_config(json::object(), kNoEnv);
  CHECK(c.feed.name == "registry");
  CHECK(c.feed.start_cursor == "0");
  CHECK(c.feed.poll_limit == 100);
  CHECK(c.feed.poll_interval == 5s);
  CHECK(c.blob.segment_size == std::uint64_t{1} << 30);
  CHECK(c.blob.ticket_ttl == 10min);
  CHECK_FALSE(c.blob.capacity);
  CHECK(c.metrics.budget.batch_size == 128);
  CHECK(c.downloads.max_attempts == 8);
  CHECK(c.sla == 24h);
  CHECK(c.workers == 4);
  CHECK(parse_config(nullptr, kNoEnv).workers == 4);
}

TEST_CASE("values from the document") {
  auto c = parse_config(json::parse(R"({
    "feed": {"url": "https://replicate.example/_changes", "poll_limit": 500, "poll_interval": "30s"},
    "store": {"path": "/var/lib/follower/meta.db"},
    "blob": {"root": "/srv/blobs", "segment_size": 1048576, "manager": "127.0.0.1:7070", "capacity": 5000},
    "metrics": {"url": "https://api.example", "requests_per_interval": 10, "interval": "1m", "batch_size": 64},
    "advisories": {"directory": "/srv/osv"},
    "downloads": {"max_attempts": 3, "backoff_base": 1.5, "lease": "2m"},
    "sla": "12h",
    "workers": 2
  })"),
                        kNoEnv);
  CHECK(c.feed.url == "https://replicate.example/_changes");
  CHECK(c.feed.poll_limit == 500);
  CHECK(c.feed.poll_interval == 30s);
  CHECK(c.blob.capacity == 5000u);
  CHECK(c.metrics.budget.requests_per_interval == 10);
  CHECK(c.metrics.budget.interval == 1min);
  CHECK(c.downloads.backoff_base == 1500ms);
  CHECK(c.downloads.lease == 2min);
  CHECK(c.sla == 12h);
  CHECK(c.workers == 2);
  CHECK_NOTHROW(c.require({"feed.url", "store.path", "blob.root", "blob.manager", "metrics.url", "advisories"}));
}

TEST_CASE("environment overrides the file") {
  auto env = fake_env({{"FOLLOWER_STORE_PATH", "/tmp/x.db"},
                       {"FOLLOWER_METRICS_BATCH_SIZE", "32"},
                       {"FOLLOWER_SLA", "2h"},
                       {"FOLLOWER_FEED_URL", "http://other"}});
  auto c = parse_config({{"store", {{"path", "/file.db"}}}, {"feed", {{"url", "http://file"}}}}, env);
  CHECK(c.store.path == "/tmp/x.db");
  CHECK(c.metrics.budget.batch_size == 32);
  CHECK(c.sla == 2h);
  CHECK(c.feed.url == "http://other");

  CHECK(failure(json::object(), fake_env({{"FOLLOWER_WORKERS", "many"}})).find("'workers'") != std::string::npos);
}

TEST_CASE("missing fields are named") {
  auto c = parse_config(json::object(), kNoEnv);
  try {
    c.require({"store.path", "feed.url"});
    FAIL("require passed");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::config_invalid);
    CHECK(std::string(e.what()).find("'store.path'") != std::string::npos);
  }
  CHECK_THROWS_AS(c.require({"advisories"}), Error);
}

TEST_CASE("bad values are rejected with the field name") {
  CHECK(failure({{"feed", {{"poll_limit", 0}}}}).find("feed.poll_limit") != std::string::npos);
  CHECK(failure({{"feed", {{"poll_limit", -3}}}}).find("feed.poll_limit") != std::string::npos);
  CHECK(failure({{"feed", {{"url", 5}}}}).find("feed.url") != std::string::npos);
  CHECK(failure({{"feed", "nope"}}).find("feed") != std::string::npos);
  CHECK(failure({{"sla", "soon"}}).find("'sla'") != std::string::npos);
  CHECK(failure({{"blob", {{"ticket_ttl", 0}}}}).find("blob.ticket_ttl") != std::string::npos);
  CHECK(failure({{"metrics", {{"batch_size", 0}}}}).find("metrics.batch_size") != std::string::npos);
  CHECK(failure({{"downloads", {{"max_attempts", 0}}}}).find("downloads.max_attempts") != std::string::npos);
  CHECK(failure(json::array()).find("object") != std::string::npos);
}

TEST_CASE("config files") {
  testing::TempDir dir;
  testing::write_file(dir / "ok.json", R"({
    // comments are allowed
    "store": {"path": "meta.db"}
  })");
  testing::write_file(dir / "bad.json", "{ nope");
  CHECK(load_config(dir / "ok.json", kNoEnv).store.path == "meta.db");
  CHECK_THROWS_AS(load_config(dir / "bad.json", kNoEnv), Error);
  CHECK_THROWS_AS(load_config(dir / "missing.json", kNoEnv), Error);
  CHECK(load_config({}, fake_env({{"FOLLOWER_WORKERS", "9"}})).workers == 9);
}
