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

#include <random>
#include <thread>

#include "blob_recount.h"
#include "doctest.h"
#include "follower/blob_store.h"
#include "follower/digest.h"
#include "follower/errors.h"
#include "support.h"

using namespace follower;

namespace {

BlobManager::Options opts(const std::filesystem::path& root) {
  BlobManager::Options o;
  o.root = root;
  o.fsync = false;
  return o;
}

template <class F>
Errc error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return Errc::invalid_argument;
}

}  // namespace

TEST_CASE("blob keys") {
  auto k = make_blob_key("lib", "1.0.0", "http://r/lib/-/lib-1.0.0.tgz");
  CHECK(k.starts_with("lib@1.0.0#"));
  CHECK(k.size() == std::string("lib@1.0.0#").size() + 16);
  CHECK(k == make_blob_key("lib", "1.0.0", "http://r/lib/-/lib-1.0.0.tgz"));
  CHECK(k != make_blob_key("lib", "1.0.0", "http://mirror/lib-1.0.0.tgz"));
}

TEST_CASE("reserve hands out disjoint appended ranges") {
  testing::TempDir dir;
  SimulatedClock clock;
  BlobManager m(opts(dir.path()), clock);
  auto a = m.reserve("a", 100);
  CHECK(a.file_name == "seg-0");
  CHECK(a.offset == 0);
  CHECK(a.size == 100);
  auto b = m.reserve("b", 50);
  CHECK(b.file_name == "seg-0");
  CHECK(b.offset >= 100);
  CHECK(error_of([&] { m.reserve("z", 0); }) == Errc::invalid_argument);
}

TEST_CASE("commit, lookup and read") {
  testing::TempDir dir;
  SimulatedClock clock;
  BlobManager m(opts(dir.path()), clock);
  const std::string bytes = "hello tarball";
  auto t = m.reserve("k", bytes.size());
  CHECK(error_of([&] { m.lookup("k"); }) == Errc::not_found);  // mid-write
  write_range(dir.path(), t, bytes);
  auto loc = m.commit(t.ticket_id, sha256_hex(bytes));
  CHECK(m.lookup("k") == loc);
  CHECK(loc.num_bytes == bytes.size());
  CHECK(read_blob(dir.path(), loc) == bytes);
  CHECK(error_of([&] { m.reserve("k", 5); }) == Errc::already_stored);
  CHECK(error_of([&] { m.lookup("unknown"); }) == Errc::not_found);
  CHECK(error_of([&] { m.commit(t.ticket_id, sha256_hex(bytes)); }) != Errc::io_failure);
}

TEST_CASE("expired tickets and bad digests never become visible") {
  testing::TempDir dir;
  SimulatedClock clock;
  BlobManager m(opts(dir.path()), clock);

  auto t = m.reserve("late", 4);
  write_range(dir.path(), t, "abcd");
  clock.advance(std::chrono::minutes{11});
  CHECK(error_of([&] { m.commit(t.ticket_id, sha256_hex("abcd")); }) == Errc::ticket_expired);
  CHECK(error_of([&] { m.lookup("late"); }) == Errc::not_found);

  auto u = m.reserve("bad", 4);
  write_range(dir.path(), u, "abcd");
  CHECK(error_of([&] { m.commit(u.ticket_id, sha256_hex("wxyz")); }) == Errc::checksum_mismatch);
  CHECK(error_of([&] { m.lookup("bad"); }) == Errc::not_found);

  // Abandoned ranges are holes and are not handed out again.
  auto v = m.reserve("late", 4);
  CHECK(v.offset >= u.offset + 4);
  CHECK(m.holes().size() == 2);
}

TEST_CASE("tampered segment is detected") {
  testing::TempDir dir;
  SimulatedClock clock;
  BlobManager m(opts(dir.path()), clock);
  auto loc = store_blob(m, dir.path(), "k", "payload-bytes");
  {
    std::fstream f(dir.path() / loc.file_name, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(std::streamoff(loc.byte_offset + 2));
    f.put('X');
  }
  CHECK(error_of([&] { read_blob(dir.path(), loc); }) == Errc::corruption);
}

TEST_CASE("segments roll over") {
  testing::TempDir dir;
  SimulatedClock clock;
  auto o = opts(dir.path());
  o.segment_size = 100;
  BlobManager m(o, clock);
  auto a = store_blob(m, dir.path(), "a", std::string(60, 'a'));
  auto b = store_blob(m, dir.path(), "b", std::string(60, 'b'));
  auto c = store_blob(m, dir.path(), "c", std::string(150, 'c'));
  CHECK(a.file_name == "seg-0");
  CHECK(b.file_name == "seg-1");
  CHECK(c.file_name == "seg-2");
  CHECK(read_blob(dir.path(), c) == std::string(150, 'c'));
}

TEST_CASE("capacity limits reservations") {
  testing::TempDir dir;
  SimulatedClock clock;
  auto o = opts(dir.path());
  o.capacity = 100;
  BlobManager m(o, clock);
  m.reserve("a", 80);
  CHECK(error_of([&] { m.reserve("b", 30); }) == Errc::store_full);
}

TEST_CASE("restart replays the index log") {
  testing::TempDir dir;
  SimulatedClock clock;
  std::map<std::string, BlobLocation> before;
  std::uint64_t dangling_offset = 0;
  {
    BlobManager m(opts(dir.path()), clock);
    for (int i = 0; i < 20; ++i) store_blob(m, dir.path(), "k" + std::to_string(i), std::string(10 + i, char('a' + i)));
    auto t = m.reserve("dangling", 30);
    write_partial(dir.path(), t, std::string(30, 'z'));
    dangling_offset = t.offset;
    before = m.entries();
  }
  BlobManager m(opts(dir.path()), clock);
  CHECK(m.entries() == before);
  CHECK(error_of([&] { m.lookup("dangling"); }) == Errc::not_found);
  auto t = m.reserve("dangling", 30);
  CHECK(t.offset >= dangling_offset + 30);
  for (const auto& [key, loc] : before) CHECK(read_blob(dir.path(), loc).size() == loc.num_bytes);

  auto ro = opts(dir.path());
  ro.read_only = true;
  BlobManager reader(ro, clock);
  CHECK(reader.entries() == before);
  CHECK(error_of([&] { reader.reserve("x", 1); }) == Errc::invalid_argument);
}

TEST_CASE("size statistics") {
  auto s = compute_size_stats({10, 20, 30}, std::nullopt);
  CHECK(s.count == 3);
  CHECK(s.total_bytes == 60);
  CHECK(s.median == 20);
  CHECK(s.mean == 20);
  auto t = compute_size_stats({10, 20, 30}, 25);
  CHECK(t.retained_count == 2);
  CHECK(t.retained_bytes == 30);
  CHECK(t.fraction_retained == doctest::Approx(2.0 / 3.0));
  CHECK(t.byte_fraction_retained == 0.5);
  CHECK(compute_size_stats({1, 2, 3, 4}, std::nullopt).median == 2.5);
  auto empty = compute_size_stats({}, 5);
  CHECK(empty.count == 0);
  CHECK(empty.fraction_retained == 0);
}

TEST_CASE("stats agree with a recount of the index log") {
  testing::TempDir dir;
  SimulatedClock clock;
  BlobManager m(opts(dir.path()), clock);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 300; ++i) {
    const std::size_t size = rng() % 10 == 0 ? 5000 + rng() % 20000 : 1 + rng() % 200;
    store_blob(m, dir.path(), "b" + std::to_string(i), std::string(size, 'x'));
  }
  auto t = m.reserve("never", 77);  // reserved, never committed
  (void)t;
  for (std::uint64_t threshold : {0ull, 100ull, 200ull, 6000ull, 1000000ull}) {
    auto s = m.stats(threshold);
    auto r = oracle::recount(dir.path(), threshold);
    CHECK(s.count == r.count);
    CHECK(s.total_bytes == r.bytes);
    CHECK(s.retained_count == r.kept);
    CHECK(s.retained_bytes == r.kept_bytes);
    CHECK(s.fraction_retained == double(r.kept) / double(r.count));
    CHECK(s.byte_fraction_retained == double(r.kept_bytes) / double(r.bytes));
  }
}

TEST_CASE("concurrent writers produce non-overlapping, readable blobs") {
  testing::TempDir dir;
  SystemClock clock;
  BlobManager m(opts(dir.path()), clock);
  constexpr int kWorkers = 6, kPer = 50;
  std::vector<std::thread> threads;
  for (int w = 0; w < kWorkers; ++w) {
    threads.emplace_back([&, w] {
      for (int i = 0; i < kPer; ++i) {
        const auto key = "w" + std::to_string(w) + "-" + std::to_string(i);
        store_blob(m, dir.path(), key, key + std::string(std::size_t(i), '.'));
      }
    });
  }
  for (auto& t : threads) t.join();
  auto entries = m.entries();
  REQUIRE(entries.size() == kWorkers * kPer);
  std::map<std::string, std::vector<std::pair<std::uint64_t, std::uint64_t>>> by_file;
  for (const auto& [key, loc] : entries) {
    CHECK(read_blob(dir.path(), loc).starts_with(key));
    by_file[loc.file_name].emplace_back(loc.byte_offset, loc.byte_offset + loc.num_bytes);
  }
  for (auto& [file, ranges] : by_file) {
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i) CHECK(ranges[i - 1].second <= ranges[i].first);
  }
}
