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

#include "follower/manager_protocol.h"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "follower/errors.h"
#include "follower/json_log.h"

namespace follower {

using nlohmann::json;

namespace {

bool read_exact(int fd, char* out, std::size_t len, bool allow_eof_at_start) {
  std::size_t done = 0;
  while (done < len) {
    auto n = ::recv(fd, out + done, len - done, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::io_failure, std::string("recv: ") + std::strerror(errno));
    }
    if (n == 0) {
      if (done == 0 && allow_eof_at_start) return false;
      throw Error(Errc::protocol_error, "connection closed mid-frame");
    }
    done += std::size_t(n);
  }
  return true;
}

std::uint64_t get_u64(const json& j, const char* field) {
  if (!j.contains(field) || !j[field].is_number_unsigned())
    throw Error(Errc::protocol_error, std::string("missing or invalid field '") + field + "'");
  return j[field].get<std::uint64_t>();
}

std::string get_str(const json& j, const char* field) {
  if (!j.contains(field) || !j[field].is_string())
    throw Error(Errc::protocol_error, std::string("missing or invalid field '") + field + "'");
  return j[field].get<std::string>();
}

BlobLocation location_from_json(const json& j) {
  return {get_str(j, "file_name"), get_u64(j, "byte_offset"), get_u64(j, "num_bytes"), get_str(j, "checksum")};
}

}  // namespace

std::string encode_frame(std::string_view payload) {
  if (payload.size() > kMaxFrameBytes) throw Error(Errc::protocol_error, "frame too large");
  std::uint32_t n = htonl(std::uint32_t(payload.size()));
  std::string out(reinterpret_cast<const char*>(&n), 4);
  out.append(payload);
  return out;
}

bool read_frame(int fd, std::string& payload) {
  char header[4];
  if (!read_exact(fd, header, 4, true)) return false;
  std::uint32_t n = 0;
  std::memcpy(&n, header, 4);
  n = ntohl(n);
  if (n > kMaxFrameBytes) throw Error(Errc::protocol_error, "frame too large");
  payload.assign(n, '\0');
  read_exact(fd, payload.data(), n, false);
  return true;
}

void write_frame(int fd, std::string_view payload) {
  auto frame = encode_frame(payload);
  std::size_t done = 0;
  while (done < frame.size()) {
    auto n = ::send(fd, frame.data() + done, frame.size() - done, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::io_failure, std::string("send: ") + std::strerror(errno));
    }
    done += std::size_t(n);
  }
}

json to_json(const BlobLocation& loc) {
  return {{"file_name", loc.file_name},
          {"byte_offset", loc.byte_offset},
          {"num_bytes", loc.num_bytes},
          {"checksum", loc.checksum}};
}

json to_json(const WriteTicket& t) {
  return {{"ticket", t.ticket_id}, {"key", t.key},   {"file_name", t.file_name},
          {"offset", t.offset},    {"size", t.size}, {"expiry_ms", to_epoch_ms(t.expiry)}};
}

json to_json(const SizeStats& s) {
  json j = {{"count", s.count},
            {"total_bytes", s.total_bytes},
            {"mean", s.mean},
            {"median", s.median},
            {"retained_count", s.retained_count},
            {"retained_bytes", s.retained_bytes},
            {"fraction_retained", s.fraction_retained},
            {"byte_fraction_retained", s.byte_fraction_retained}};
  j["threshold"] = s.threshold ? json(*s.threshold) : json(nullptr);
  return j;
}

json handle_manager_request(BlobIndex& index, const json& request) {
  try {
    if (!request.is_object()) throw Error(Errc::protocol_error, "request must be an object");
    auto op = get_str(request, "op");
    json reply = {{"ok", true}};
    if (op == "RESERVE") {
      reply.update(to_json(index.reserve(get_str(request, "key"), get_u64(request, "size"))));
    } else if (op == "COMMIT") {
      reply.update(to_json(index.commit(get_u64(request, "ticket"), get_str(request, "digest"))));
    } else if (op == "LOOKUP") {
      reply.update(to_json(index.lookup(get_str(request, "key"))));
    } else if (op == "STATS") {
      std::optional<std::uint64_t> threshold;
      if (request.contains("threshold") && !request["threshold"].is_null()) threshold = get_u64(request, "threshold");
      reply.update(to_json(index.stats(threshold)));
    } else {
      throw Error(Errc::protocol_error, "unknown op '" + op + "'");
    }
    return reply;
  } catch (const Error& e) {
    return {{"ok", false}, {"error", errc_name(e.code())}, {"message", e.what()}};
  } catch (const std::exception& e) {
    return {{"ok", false}, {"error", errc_name(Errc::io_failure)}, {"message", e.what()}};
  }
}

// -- server --------------------------------------------------------------------

ManagerServer::ManagerServer(BlobIndex& index, std::string host, int port) : index_(index) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (listen_fd_ < 0) throw Error(Errc::io_failure, "socket failed");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(std::uint16_t(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw Error(Errc::invalid_argument, "bad listen address " + host);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 128) != 0) {
    auto msg = std::string(std::strerror(errno));
    ::close(listen_fd_);
    throw Error(Errc::io_failure, "cannot listen on " + host + ":" + std::to_string(port) + ": " + msg);
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

ManagerServer::~ManagerServer() { stop(); }

void ManagerServer::stop() {
  if (stopping_.exchange(true)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  if (acceptor_.joinable()) acceptor_.join();
  ::close(listen_fd_);
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    for (int fd : conns_) ::shutdown(fd, SHUT_RDWR);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
}

void ManagerServer::accept_loop() {
  while (!stopping_) {
    int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) {
      if (errno == EINTR) continue;
      break;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::lock_guard lock(mu_);
    if (stopping_) {
      ::close(fd);
      break;
    }
    conns_.push_back(fd);
    workers_.emplace_back([this, fd] { serve(fd); });
  }
}

void ManagerServer::serve(int fd) {
  std::string payload;
  try {
    while (read_frame(fd, payload)) {
      json request = json::parse(payload, nullptr, false);
      json reply = request.is_discarded()
                       ? json{{"ok", false}, {"error", errc_name(Errc::protocol_error)}, {"message", "invalid JSON"}}
                       : handle_manager_request(index_, request);
      write_frame(fd, reply.dump());
    }
  } catch (const std::exception& e) {
    if (!stopping_) log_event(LogLevel::warn, "manager.connection_error", {{"message", e.what()}});
  }
  std::lock_guard lock(mu_);
  std::erase(conns_, fd);
  ::close(fd);
}

// -- client --------------------------------------------------------------------

ManagerClient::ManagerClient(const std::string& host, int port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res)
    throw Error(Errc::io_failure, "cannot resolve manager host " + host);
  fd_ = ::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol);
  int rc = fd_ < 0 ? -1 : ::connect(fd_, res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc != 0) {
    auto msg = std::string(std::strerror(errno));
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
    throw Error(Errc::io_failure, "cannot connect to manager " + host + ":" + std::to_string(port) + ": " + msg);
  }
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

std::unique_ptr<ManagerClient> ManagerClient::connect(const std::string& address) {
  auto colon = address.rfind(':');
  if (colon == std::string::npos) throw Error(Errc::config_invalid, "manager address must be host:port");
  return std::make_unique<ManagerClient>(address.substr(0, colon), std::stoi(address.substr(colon + 1)));
}

ManagerClient::~ManagerClient() {
  if (fd_ >= 0) ::close(fd_);
}

json ManagerClient::call(const json& request) {
  std::lock_guard lock(mu_);
  write_frame(fd_, request.dump());
  std::string payload;
  if (!read_frame(fd_, payload)) throw Error(Errc::io_failure, "manager closed the connection");
  auto reply = json::parse(payload);
  if (!reply.value("ok", false)) {
    auto name = reply.value("error", std::string("protocol-error"));
    throw Error(errc_from_name(name).value_or(Errc::protocol_error), reply.value("message", name));
  }
  return reply;
}

WriteTicket ManagerClient::reserve(const std::string& key, std::uint64_t size) {
  auto r = call({{"op", "RESERVE"}, {"key", key}, {"size", size}});
  return {get_u64(r, "ticket"), get_str(r, "key"),  get_str(r, "file_name"),
          get_u64(r, "offset"), get_u64(r, "size"), from_epoch_ms(r.at("expiry_ms").get<std::int64_t>())};
}

BlobLocation ManagerClient::commit(std::uint64_t ticket_id, const std::string& checksum) {
  return location_from_json(call({{"op", "COMMIT"}, {"ticket", ticket_id}, {"digest", checksum}}));
}

BlobLocation ManagerClient::lookup(const std::string& key) {
  return location_from_json(call({{"op", "LOOKUP"}, {"key", key}}));
}

SizeStats ManagerClient::stats(std::optional<std::uint64_t> threshold) {
  json req = {{"op", "STATS"}};
  if (threshold) req["threshold"] = *threshold;
  auto r = call(req);
  SizeStats s;
  s.count = get_u64(r, "count");
  s.total_bytes = get_u64(r, "total_bytes");
  s.mean = r.at("mean").get<double>();
  s.median = r.at("median").get<double>();
  if (!r.at("threshold").is_null()) s.threshold = r.at("threshold").get<std::uint64_t>();
  s.retained_count = get_u64(r, "retained_count");
  s.retained_bytes = get_u64(r, "retained_bytes");
  s.fraction_retained = r.at("fraction_retained").get<double>();
  s.byte_fraction_retained = r.at("byte_fraction_retained").get<double>();
  return s;
}

}  // namespace follower
