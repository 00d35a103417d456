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

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <thread>

#include "doctest.h"
#include "follower/blob_store.h"
#include "follower/digest.h"
#include "follower/errors.h"
#include "follower/manager_protocol.h"
#include "support.h"

using namespace follower;
using nlohmann::json;

namespace {

int dial(int port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(std::uint16_t(port));
  ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
  REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  return fd;
}

json roundtrip(int fd, const std::string& payload) {
  write_frame(fd, payload);
  std::string reply;
  REQUIRE(read_frame(fd, reply));
  return json::parse(reply);
}

struct Fixture {
  testing::TempDir dir;
  SimulatedClock clock;
  BlobManager manager;
  ManagerServer server;

  Fixture() : manager(options(dir.path()), clock), server(manager) {}

  static BlobManager::Options options(const std::filesystem::path& root) {
    BlobManager::Options o;
    o.root = root;
    o.fsync = false;
    return o;
  }
};

}  // namespace

TEST_CASE("frames are a big-endian length then the payload") {
  auto f = encode_frame(R"({"op":"STATS"})");
  REQUIRE(f.size() == 4 + 14);
  CHECK(f[0] == 0);
  CHECK(f[1] == 0);
  CHECK(f[2] == 0);
  CHECK(f[3] == 14);
  CHECK(f.substr(4) == R"({"op":"STATS"})");
  CHECK(encode_frame(std::string(300, 'x')).substr(0, 4) == std::string("\0\0\x01\x2c", 4));
}

TEST_CASE("raw protocol exchange") {
  Fixture fx;
  int fd = dial(fx.server.port());

  auto r = roundtrip(fd, json{{"op", "RESERVE"}, {"key", "k"}, {"size", 5}}.dump());
  REQUIRE(r["ok"] == true);
  CHECK(r["file_name"] == "seg-0");
  CHECK(r["offset"] == 0);
  CHECK(r["size"] == 5);
  WriteTicket t{r["ticket"].get<std::uint64_t>(), "k", "seg-0", 0, 5, {}};
  write_range(fx.dir.path(), t, "12345");

  auto missing = roundtrip(fd, json{{"op", "LOOKUP"}, {"key", "k"}}.dump());
  CHECK(missing["ok"] == false);
  CHECK(missing["error"] == "not-found");

  auto c = roundtrip(fd, json{{"op", "COMMIT"}, {"ticket", t.ticket_id}, {"digest", sha256_hex("12345")}}.dump());
  REQUIRE(c["ok"] == true);
  CHECK(c["num_bytes"] == 5);
  CHECK(c["checksum"] == sha256_hex("12345"));

  auto l = roundtrip(fd, json{{"op", "LOOKUP"}, {"key", "k"}}.dump());
  CHECK(l["byte_offset"] == 0);

  auto dup = roundtrip(fd, json{{"op", "RESERVE"}, {"key", "k"}, {"size", 5}}.dump());
  CHECK(dup["error"] == "already-stored");

  auto s = roundtrip(fd, json{{"op", "STATS"}, {"threshold", 4}}.dump());
  CHECK(s["count"] == 1);
  CHECK(s["retained_count"] == 0);
  CHECK(s["threshold"] == 4);

  CHECK(roundtrip(fd, R"({"op":"DANCE"})")["error"] == "protocol-error");
  CHECK(roundtrip(fd, R"({"op":"RESERVE","key":"x"})")["error"] == "protocol-error");
  CHECK(roundtrip(fd, "not json")["error"] == "protocol-error");
  ::close(fd);
}

TEST_CASE("client maps error names back to error codes") {
  Fixture fx;
  auto client = ManagerClient::connect("127.0.0.1:" + std::to_string(fx.server.port()));
  auto loc = store_blob(*client, fx.dir.path(), "pkg@1.0.0#abc", "tarball-bytes");
  CHECK(client->lookup("pkg@1.0.0#abc") == loc);
  CHECK(read_blob(fx.dir.path(), loc) == "tarball-bytes");
  // store_blob treats an already-stored key as success.
  CHECK(store_blob(*client, fx.dir.path(), "pkg@1.0.0#abc", "tarball-bytes") == loc);
  try {
    client->lookup("nope");
    FAIL("lookup of unknown key succeeded");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::not_found);
  }
  auto t = client->reserve("other", 3);
  write_range(fx.dir.path(), t, "abc");
  try {
    client->commit(t.ticket_id, sha256_hex("xyz"));
    FAIL("bad digest committed");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::checksum_mismatch);
  }
  CHECK(client->stats(std::nullopt).count == 1);
}

TEST_CASE("many clients at once") {
  Fixture fx;
  const auto address = "127.0.0.1:" + std::to_string(fx.server.port());
  std::vector<std::thread> threads;
  for (int w = 0; w < 4; ++w) {
    threads.emplace_back([&, w] {
      auto client = ManagerClient::connect(address);
      for (int i = 0; i < 25; ++i) {
        auto key = "w" + std::to_string(w) + "/" + std::to_string(i);
        store_blob(*client, fx.dir.path(), key, key);
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(fx.manager.entries().size() == 100);
  for (const auto& [key, loc] : fx.manager.entries()) CHECK(read_blob(fx.dir.path(), loc) == key);
}

TEST_CASE("stop closes open connections") {
  Fixture fx;
  auto client = ManagerClient::connect("127.0.0.1:" + std::to_string(fx.server.port()));
  fx.server.stop();
  CHECK_THROWS_AS(client->stats(std::nullopt), Error);
  CHECK_THROWS_AS(ManagerClient::connect("not-an-address"), Error);
}
