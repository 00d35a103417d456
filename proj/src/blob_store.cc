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

#include "follower/blob_store.h"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "follower/digest.h"
#include "follower/errors.h"
#include "follower/json_log.h"

namespace follower {

namespace fs = std::filesystem;

std::string make_blob_key(std::string_view package, std::string_view version, std::string_view tarball_url) {
  return std::string(package) + "@" + std::string(version) + "#" + sha256_hex(tarball_url).substr(0, 16);
}

SizeStats compute_size_stats(std::vector<std::uint64_t> sizes, std::optional<std::uint64_t> threshold) {
  SizeStats s;
  s.threshold = threshold;
  s.count = sizes.size();
  if (sizes.empty()) return s;
  std::sort(sizes.begin(), sizes.end());
  for (auto b : sizes) {
    s.total_bytes += b;
    if (threshold && b <= *threshold) {
      ++s.retained_count;
      s.retained_bytes += b;
    }
  }
  s.mean = double(s.total_bytes) / double(s.count);
  const auto mid = sizes.size() / 2;
  s.median = sizes.size() % 2 ? double(sizes[mid]) : (double(sizes[mid - 1]) + double(sizes[mid])) / 2.0;
  if (!threshold) {
    s.retained_count = s.count;
    s.retained_bytes = s.total_bytes;
  }
  s.fraction_retained = double(s.retained_count) / double(s.count);
  s.byte_fraction_retained = s.total_bytes ? double(s.retained_bytes) / double(s.total_bytes) : 1.0;
  return s;
}

namespace {

std::string segment_name(std::uint64_t n) { return "seg-" + std::to_string(n); }

std::optional<std::uint64_t> segment_number(std::string_view file) {
  if (!file.starts_with("seg-")) return std::nullopt;
  return std::stoull(std::string(file.substr(4)));
}

[[noreturn]] void throw_errno(Errc code, const std::string& what) {
  throw Error(code, what + ": " + std::strerror(errno));
}

class Fd {
 public:
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  int get() const { return fd_; }

 private:
  int fd_;
};

void pwrite_all(int fd, std::string_view bytes, std::uint64_t offset) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    auto n = ::pwrite(fd, bytes.data() + done, bytes.size() - done, off_t(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno(Errc::io_failure, "pwrite");
    }
    done += std::size_t(n);
  }
}

// Returns the number of bytes actually read (short at end of file).
std::size_t pread_all(int fd, char* out, std::size_t len, std::uint64_t offset) {
  std::size_t done = 0;
  while (done < len) {
    auto n = ::pread(fd, out + done, len - done, off_t(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno(Errc::io_failure, "pread");
    }
    if (n == 0) break;
    done += std::size_t(n);
  }
  return done;
}

// Digest of a segment range, or nullopt if the range is not fully present.
std::optional<std::string> digest_range(const fs::path& file, std::uint64_t offset, std::uint64_t size) {
  Fd fd(::open(file.c_str(), O_RDONLY | O_CLOEXEC));
  if (fd.get() < 0) return std::nullopt;
  Sha256 h;
  std::vector<char> buf(std::min<std::uint64_t>(size, 1 << 20));
  std::uint64_t done = 0;
  while (done < size) {
    auto want = std::min<std::uint64_t>(buf.size(), size - done);
    auto got = pread_all(fd.get(), buf.data(), want, offset + done);
    if (got != want) return std::nullopt;
    h.update({buf.data(), got});
    done += got;
  }
  return h.hex_digest();
}

void write_at(const fs::path& root, const WriteTicket& t, std::string_view bytes, bool sync) {
  Fd fd(::open((root / t.file_name).c_str(), O_WRONLY | O_CREAT | O_CLOEXEC, 0644));
  if (fd.get() < 0) throw_errno(Errc::io_failure, "open " + t.file_name);
  pwrite_all(fd.get(), bytes, t.offset);
  if (sync && ::fdatasync(fd.get()) != 0) throw_errno(Errc::io_failure, "fdatasync");
}

}  // namespace

BlobManager::BlobManager(Options options, Clock& clock) : opts_(std::move(options)), clock_(clock) {
  if (opts_.segment_size == 0) throw Error(Errc::invalid_argument, "segment_size must be positive");
  if (!opts_.read_only) fs::create_directories(opts_.root);
  replay_log();
  if (!opts_.read_only) {
    log_fd_ = ::open((opts_.root / "index.log").c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (log_fd_ < 0) throw_errno(Errc::io_failure, "open index.log");
  }
}

BlobManager::~BlobManager() {
  if (log_fd_ >= 0) ::close(log_fd_);
}

void BlobManager::replay_log() {
  auto path = opts_.root / "index.log";
  std::ifstream in(path, std::ios::binary);
  if (!in) return;
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  // A torn final record (crash mid-append) is discarded.
  auto last_nl = content.rfind('\n');
  std::size_t good = last_nl == std::string::npos ? 0 : last_nl + 1;
  if (good != content.size()) {
    content.resize(good);
    if (!opts_.read_only) fs::resize_file(path, good);
  }
  std::istringstream lines(content);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream f(line);
    char kind = 0;
    std::uint64_t tid = 0;
    f >> kind >> tid;
    next_ticket_ = std::max(next_ticket_, tid + 1);
    if (kind == 'R') {
      WriteTicket t;
      std::int64_t expiry_ms = 0;
      t.ticket_id = tid;
      f >> t.file_name >> t.offset >> t.size >> expiry_ms;
      f.get();
      std::getline(f, t.key);
      t.expiry = from_epoch_ms(expiry_ms);
      auto seg = segment_number(t.file_name).value_or(0);
      if (seg > current_segment_) {
        current_segment_ = seg;
        current_offset_ = 0;
      }
      if (seg == current_segment_) current_offset_ = std::max(current_offset_, t.offset + t.size);
      reserved_bytes_ += t.size;
      tickets_[tid] = std::move(t);
    } else if (kind == 'C') {
      std::string checksum;
      f >> checksum;
      auto it = tickets_.find(tid);
      if (it == tickets_.end()) continue;
      const auto& t = it->second;
      index_.emplace(t.key, BlobLocation{t.file_name, t.offset, t.size, checksum});
      tickets_.erase(it);
    } else if (kind == 'A') {
      auto it = tickets_.find(tid);
      if (it == tickets_.end()) continue;
      f >> closed_[tid];
      holes_.push_back({it->second.file_name, it->second.offset, it->second.size});
      tickets_.erase(it);
    }
  }
}

void BlobManager::append_log(const std::string& line, bool sync) {
  std::string rec = line + "\n";
  std::size_t done = 0;
  while (done < rec.size()) {
    auto n = ::write(log_fd_, rec.data() + done, rec.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno(Errc::io_failure, "append index.log");
    }
    done += std::size_t(n);
  }
  if (sync && opts_.fsync && ::fdatasync(log_fd_) != 0) throw_errno(Errc::io_failure, "fsync index.log");
}

void BlobManager::abandon_locked(std::uint64_t ticket_id, std::string_view reason) {
  auto it = tickets_.find(ticket_id);
  if (it == tickets_.end()) return;
  append_log("A " + std::to_string(ticket_id) + " " + std::string(reason), false);
  closed_[ticket_id] = std::string(reason);
  holes_.push_back({it->second.file_name, it->second.offset, it->second.size});
  tickets_.erase(it);
}

void BlobManager::expire_tickets_locked(TimePoint now) {
  std::vector<std::uint64_t> expired;
  for (const auto& [id, t] : tickets_)
    if (t.expiry < now) expired.push_back(id);
  for (auto id : expired) {
    log_event(LogLevel::info, "blob.ticket_expired", {{"ticket", id}});
    abandon_locked(id, "expired");
  }
}

WriteTicket BlobManager::reserve(const std::string& key, std::uint64_t size) {
  if (opts_.read_only) throw Error(Errc::invalid_argument, "blob manager opened read-only");
  if (size == 0) throw Error(Errc::invalid_argument, "blob size must be positive");
  if (key.empty() || key.find('\n') != std::string::npos) throw Error(Errc::invalid_argument, "invalid blob key");
  std::lock_guard lock(mu_);
  if (index_.count(key)) throw Error(Errc::already_stored, "already stored: " + key);
  auto now = clock_.now();
  expire_tickets_locked(now);
  if (opts_.capacity && reserved_bytes_ + size > *opts_.capacity)
    throw Error(Errc::store_full, "store capacity exhausted");
  if (current_offset_ > 0 && current_offset_ + size > opts_.segment_size) {
    ++current_segment_;
    current_offset_ = 0;
  }
  WriteTicket t{next_ticket_++, key, segment_name(current_segment_), current_offset_, size, now + opts_.ticket_ttl};
  append_log("R " + std::to_string(t.ticket_id) + " " + t.file_name + " " + std::to_string(t.offset) + " " +
                 std::to_string(t.size) + " " + std::to_string(to_epoch_ms(t.expiry)) + " " + t.key,
             false);
  current_offset_ += size;
  reserved_bytes_ += size;
  tickets_[t.ticket_id] = t;
  return t;
}

BlobLocation BlobManager::commit(std::uint64_t ticket_id, const std::string& checksum) {
  if (opts_.read_only) throw Error(Errc::invalid_argument, "blob manager opened read-only");
  std::lock_guard lock(mu_);
  auto it = tickets_.find(ticket_id);
  if (it == tickets_.end()) {
    // Expired tickets may already have been swept into holes.
    auto closed = closed_.find(ticket_id);
    if (closed != closed_.end() && closed->second == "expired")
      throw Error(Errc::ticket_expired, "ticket " + std::to_string(ticket_id) + " expired");
    throw Error(Errc::not_found, "unknown or closed ticket " + std::to_string(ticket_id));
  }
  const WriteTicket t = it->second;
  if (clock_.now() > t.expiry) {
    abandon_locked(ticket_id, "expired");
    throw Error(Errc::ticket_expired, "ticket " + std::to_string(ticket_id) + " expired");
  }
  if (index_.count(t.key)) {
    abandon_locked(ticket_id, "duplicate");
    throw Error(Errc::already_stored, "already stored: " + t.key);
  }
  auto actual = digest_range(opts_.root / t.file_name, t.offset, t.size);
  if (!actual || *actual != checksum) {
    abandon_locked(ticket_id, "checksum");
    throw Error(Errc::checksum_mismatch, "checksum mismatch for " + t.key);
  }
  append_log("C " + std::to_string(ticket_id) + " " + checksum, true);
  BlobLocation loc{t.file_name, t.offset, t.size, checksum};
  index_.emplace(t.key, loc);
  tickets_.erase(it);
  return loc;
}

BlobLocation BlobManager::lookup(const std::string& key) {
  std::lock_guard lock(mu_);
  auto it = index_.find(key);
  if (it == index_.end()) throw Error(Errc::not_found, "no blob for key " + key);
  return it->second;
}

SizeStats BlobManager::stats(std::optional<std::uint64_t> threshold) {
  std::vector<std::uint64_t> sizes;
  {
    std::lock_guard lock(mu_);
    sizes.reserve(index_.size());
    for (const auto& [k, loc] : index_) sizes.push_back(loc.num_bytes);
  }
  return compute_size_stats(std::move(sizes), threshold);
}

std::map<std::string, BlobLocation> BlobManager::entries() {
  std::lock_guard lock(mu_);
  return index_;
}

std::vector<BlobManager::Hole> BlobManager::holes() {
  std::lock_guard lock(mu_);
  return holes_;
}

std::size_t BlobManager::live_tickets() {
  std::lock_guard lock(mu_);
  return tickets_.size();
}

void write_range(const fs::path& root, const WriteTicket& ticket, std::string_view bytes) {
  if (bytes.size() != ticket.size)
    throw Error(Errc::invalid_argument, "write of " + std::to_string(bytes.size()) + " bytes for a ticket of " +
                                            std::to_string(ticket.size));
  write_at(root, ticket, bytes, true);
}

void write_partial(const fs::path& root, const WriteTicket& ticket, std::string_view bytes) {
  write_at(root, ticket, bytes.substr(0, std::min<std::size_t>(bytes.size(), ticket.size)), false);
}

std::string read_blob(const fs::path& root, const BlobLocation& loc) {
  Fd fd(::open((root / loc.file_name).c_str(), O_RDONLY | O_CLOEXEC));
  if (fd.get() < 0) throw_errno(Errc::io_failure, "open " + loc.file_name);
  std::string out(loc.num_bytes, '\0');
  if (pread_all(fd.get(), out.data(), out.size(), loc.byte_offset) != out.size())
    throw Error(Errc::io_failure, "short read from " + loc.file_name);
  if (sha256_hex(out) != loc.checksum)
    throw Error(Errc::corruption, "digest mismatch reading " + loc.file_name + "@" + std::to_string(loc.byte_offset));
  return out;
}

BlobLocation store_blob(BlobIndex& index, const fs::path& root, const std::string& key, std::string_view bytes) {
  WriteTicket t;
  try {
    t = index.reserve(key, bytes.size());
  } catch (const Error& e) {
    if (e.code() == Errc::already_stored) return index.lookup(key);
    throw;
  }
  write_range(root, t, bytes);
  try {
    return index.commit(t.ticket_id, sha256_hex(bytes));
  } catch (const Error& e) {
    if (e.code() == Errc::already_stored) return index.lookup(key);
    throw;
  }
}

}  // namespace follower
