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

#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "follower/clock.h"

namespace follower {

struct HttpResponse {
  int status = 0;  // 0 when the connection itself failed
  std::string body;

  bool ok() const { return status >= 200 && status < 300; }
};

/// GET-only transport. The production implementation speaks HTTP(S); the
/// replay harness implements the same interface in-process.
class HttpClient {
 public:
  virtual ~HttpClient() = default;
  virtual HttpResponse get(const std::string& url) = 0;
};

struct Url {
  std::string scheme;  // "http" or "https"
  std::string host;
  int port = 0;
  std::string target;  // path plus query, always starting with '/'

  std::string origin() const;
};

std::optional<Url> parse_url(std::string_view url);
std::string url_encode(std::string_view component);
std::string url_decode(std::string_view component);
/// Value of `key` in a "a=1&b=2" query string (decoded).
std::optional<std::string> query_param(std::string_view query, std::string_view key);

class NetHttpClient final : public HttpClient {
 public:
  explicit NetHttpClient(Millis timeout = Millis{30'000});
  ~NetHttpClient() override;
  HttpResponse get(const std::string& url) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace follower
