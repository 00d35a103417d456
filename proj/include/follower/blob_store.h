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

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "follower/clock.h"

namespace follower {

/// Stable key for one archived tarball: "<name>@<version>#<16 hex of sha256(url)>".
std::string make_blob_key(std::string_view package, std::string_view version, std::string_view tarball_url);

struct BlobLocation {
  std::string file_name;
  std::uint64_t byte_offset = 0;
  std::uint64_t num_bytes = 0;
  std::string checksum;  // hex SHA-256 of the blob

  bool operator==(const BlobLocation&) const = default;
};

struct WriteTicket {
  std::uint64_t ticket_id = 0;
  std::string key;
  std::string file_name;
  std::uint64_t offset = 0;
  std::uint64_t size = 0;
  TimePoint expiry;
};

struct SizeStats {
  std::uint64_t count = 0;
  std::uint64_t total_bytes = 0;
  double mean = 0;
  double median = 0;
  std::optional<std::uint64_t> threshold;
  std::uint64_t retained_count = 0;  // blobs with size <= threshold
  std::uint64_t retained_bytes = 0;
  double fraction_retained = 0;        // retained_count / count
  double byte_fraction_retained = 0;   // retained_bytes / total_bytes
};

/// Exact statistics over a list of blob sizes.
SizeStats compute_size_stats(std::vector<std::uint64_t> sizes, std::optional<std::uint64_t> threshold);

/// The manager's coordination surface. Implemented in-process by
/// BlobManager and remotely by ManagerClient.
class BlobIndex {
 public:
  virtual ~BlobIndex() = default;
  /// Throws already_stored if the key is committed, store_full, invalid_argument for size 0.
  virtual WriteTicket reserve(const std::string& key, std::uint64_t size) = 0;
  /// Throws ticket_expired, checksum_mismatch (range abandoned), already_stored, not_found.
  virtual BlobLocation commit(std::uint64_t ticket_id, const std::string& checksum) = 0;
  /// Throws not_found.
  virtual BlobLocation lookup(const std::string& key) = 0;
  virtual SizeStats stats(std::optional<std::uint64_t> threshold) = 0;
};

/// Single logical authority over an append-only store of segment files.
///
/// Layout under `root`: segment files "seg-<n>" and "index.log". The log is
/// an append-only record of reservations, commits and abandonments; it is
/// fsynced on every commit and replayed on startup. A crash between reserve
/// and commit leaves the reserved range as a hole and the key absent.
/// Reserved ranges are never handed out twice, even across restarts.
class BlobManager final : public BlobIndex {
 public:
  struct Options {
    std::filesystem::path root;
    std::uint64_t segment_size = std::uint64_t{1} << 30;
    Millis ticket_ttl = std::chrono::minutes{10};
    std::optional<std::uint64_t> capacity;  // total reserved bytes allowed
    bool fsync = true;
    bool read_only = false;
  };

  BlobManager(Options options, Clock& clock);
  ~BlobManager() override;
  BlobManager(const BlobManager&) = delete;
  BlobManager& operator=(const BlobManager&) = delete;

  WriteTicket reserve(const std::string& key, std::uint64_t size) override;
  BlobLocation commit(std::uint64_t ticket_id, const std::string& checksum) override;
  BlobLocation lookup(const std::string& key) override;
  SizeStats stats(std::optional<std::uint64_t> threshold) override;

  const std::filesystem::path& root() const { return opts_.root; }
  /// Snapshot of the committed index.
  std::map<std::string, BlobLocation> entries();
  struct Hole {
    std::string file_name;
    std::uint64_t offset;
    std::uint64_t size;
  };
  std::vector<Hole> holes();
  std::size_t live_tickets();

 private:
  void replay_log();
  void append_log(const std::string& line, bool sync);
  void expire_tickets_locked(TimePoint now);
  void abandon_locked(std::uint64_t ticket_id, std::string_view reason);

  Options opts_;
  Clock& clock_;
  std::mutex mu_;
  int log_fd_ = -1;
  std::uint64_t next_ticket_ = 1;
  std::uint64_t current_segment_ = 0;
  std::uint64_t current_offset_ = 0;
  std::uint64_t reserved_bytes_ = 0;
  std::map<std::string, BlobLocation> index_;
  std::map<std::uint64_t, WriteTicket> tickets_;
  std::vector<Hole> holes_;
  std::map<std::uint64_t, std::string> closed_;  // abandoned ticket -> reason
};

// -- worker-side I/O ---------------------------------------------------------
// Workers perform raw reads and writes against the segment files directly;
// only coordination goes through the manager.

/// Writes exactly ticket.size bytes at the ticket's offset.
void write_range(const std::filesystem::path& root, const WriteTicket& ticket, std::string_view bytes);
/// Writes a prefix only; used to simulate a worker dying mid-write.
void write_partial(const std::filesystem::path& root, const WriteTicket& ticket, std::string_view bytes);
/// Reads a committed blob and verifies its digest. Throws io_failure or corruption.
std::string read_blob(const std::filesystem::path& root, const BlobLocation& loc);

/// reserve, write, commit. An already_stored key resolves to its existing location.
BlobLocation store_blob(BlobIndex& index, const std::filesystem::path& root, const std::string& key,
                        std::string_view bytes);

}  // namespace follower
