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

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "follower/blob_store.h"
#include "json.hpp"

namespace follower {

// Manager wire protocol (see docs/manager-protocol.md).
//
// Every message, in both directions, is a frame: a 4-byte big-endian
// unsigned payload length followed by that many bytes of UTF-8 JSON.
// Requests carry "op" in {RESERVE, COMMIT, LOOKUP, STATS}; responses carry
// "ok": true plus result fields, or "ok": false with "error" set to the
// error name ("already-stored", "ticket-expired", ...) and "message".

inline constexpr std::uint32_t kMaxFrameBytes = 16u << 20;

std::string encode_frame(std::string_view payload);
/// Blocking frame I/O on a connected socket. read_frame returns false on a
/// clean EOF before any header byte.
bool read_frame(int fd, std::string& payload);
void write_frame(int fd, std::string_view payload);

/// Executes one request against an index; never throws.
nlohmann::json handle_manager_request(BlobIndex& index, const nlohmann::json& request);

nlohmann::json to_json(const BlobLocation& loc);
nlohmann::json to_json(const WriteTicket& t);
nlohmann::json to_json(const SizeStats& s);

/// TCP front end for a BlobManager; one thread per connection.
class ManagerServer {
 public:
  /// port 0 binds an ephemeral port; see port().
  ManagerServer(BlobIndex& index, std::string host = "127.0.0.1", int port = 0);
  ~ManagerServer();
  ManagerServer(const ManagerServer&) = delete;
  ManagerServer& operator=(const ManagerServer&) = delete;

  int port() const { return port_; }
  void stop();

 private:
  void accept_loop();
  void serve(int fd);

  BlobIndex& index_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<int> conns_;
  std::vector<std::thread> workers_;
};

/// Remote BlobIndex over one connection; calls are serialized.
class ManagerClient final : public BlobIndex {
 public:
  ManagerClient(const std::string& host, int port);
  /// "host:port"
  static std::unique_ptr<ManagerClient> connect(const std::string& address);
  ~ManagerClient() override;

  WriteTicket reserve(const std::string& key, std::uint64_t size) override;
  BlobLocation commit(std::uint64_t ticket_id, const std::string& checksum) override;
  BlobLocation lookup(const std::string& key) override;
  SizeStats stats(std::optional<std::uint64_t> threshold) override;

 private:
  nlohmann::json call(const nlohmann::json& request);

  int fd_ = -1;
  std::mutex mu_;
};

}  // namespace follower
