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

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "follower/http.h"

#include <algorithm>
#include <cctype>
#include <charconv>

#include "httplib.h"

namespace follower {

std::string Url::origin() const {
  std::string out = scheme + "://" + host;
  const int default_port = scheme == "https" ? 443 : 80;
  if (port != default_port) out += ":" + std::to_string(port);
  return out;
}

std::optional<Url> parse_url(std::string_view url) {
  Url u;
  auto sep = url.find("://");
  if (sep == std::string_view::npos) return std::nullopt;
  u.scheme = std::string(url.substr(0, sep));
  if (u.scheme != "http" && u.scheme != "https") return std::nullopt;
  auto rest = url.substr(sep + 3);
  auto slash = rest.find('/');
  auto authority = rest.substr(0, slash);
  u.target = slash == std::string_view::npos ? "/" : std::string(rest.substr(slash));
  auto colon = authority.rfind(':');
  if (colon != std::string_view::npos) {
    auto port_str = authority.substr(colon + 1);
    auto [p, ec] = std::from_chars(port_str.data(), port_str.data() + port_str.size(), u.port);
    if (ec != std::errc{} || p != port_str.data() + port_str.size()) return std::nullopt;
    authority = authority.substr(0, colon);
  } else {
    u.port = u.scheme == "https" ? 443 : 80;
  }
  if (authority.empty()) return std::nullopt;
  u.host = std::string(authority);
  return u;
}

std::string url_encode(std::string_view component) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : component) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out += char(c);
    } else {
      out += '%';
      out += kHex[c >> 4];
      out += kHex[c & 0xf];
    }
  }
  return out;
}

std::string url_decode(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size()) {
      int v = 0;
      auto [p, ec] = std::from_chars(s.data() + i + 1, s.data() + i + 3, v, 16);
      if (ec == std::errc{} && p == s.data() + i + 3) {
        out += char(v);
        i += 2;
        continue;
      }
    }
    out += s[i] == '+' ? ' ' : s[i];
  }
  return out;
}

std::optional<std::string> query_param(std::string_view query, std::string_view key) {
  std::size_t start = 0;
  while (start <= query.size()) {
    auto amp = query.find('&', start);
    auto item = query.substr(start, amp == std::string_view::npos ? std::string_view::npos : amp - start);
    auto eq = item.find('=');
    if (item.substr(0, eq) == key) return eq == std::string_view::npos ? "" : url_decode(item.substr(eq + 1));
    if (amp == std::string_view::npos) break;
    start = amp + 1;
  }
  return std::nullopt;
}

struct NetHttpClient::Impl {
  Millis timeout;
};

NetHttpClient::NetHttpClient(Millis timeout) : impl_(std::make_unique<Impl>()) { impl_->timeout = timeout; }
NetHttpClient::~NetHttpClient() = default;

// httplib::Client is not safe for concurrent use, so each request gets its own.
HttpResponse NetHttpClient::get(const std::string& url) {
  auto parsed = parse_url(url);
  if (!parsed) return {0, "invalid url: " + url};
  httplib::Client client(parsed->origin());
  auto secs = std::max<long>(1, std::chrono::duration_cast<std::chrono::seconds>(impl_->timeout).count());
  client.set_connection_timeout(secs);
  client.set_read_timeout(secs);
  client.set_follow_location(true);
  auto res = client.Get(parsed->target);
  if (!res) return {0, httplib::to_string(res.error())};
  return {res->status, std::move(res->body)};
}

}  // namespace follower
