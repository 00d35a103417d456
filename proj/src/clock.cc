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

#include "follower/clock.h"

#include <charconv>
#include <cstdio>
#include <ctime>
#include <thread>

namespace follower {

TimePoint SystemClock::now() const {
  return std::chrono::time_point_cast<Millis>(std::chrono::system_clock::now());
}

void SystemClock::sleep_for(Millis d) { std::this_thread::sleep_for(d); }

void SimulatedClock::advance(Millis d) {
  if (d.count() > 0) ms_.fetch_add(d.count());
}

void SimulatedClock::advance_to(TimePoint t) {
  auto target = to_epoch_ms(t);
  auto cur = ms_.load();
  while (cur < target && !ms_.compare_exchange_weak(cur, target)) {
  }
}

namespace {

bool read_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  auto* first = s.data() + pos;
  auto [p, ec] = std::from_chars(first, first + len, out);
  return ec == std::errc{} && p == first + len;
}

}  // namespace

std::optional<TimePoint> parse_iso8601(std::string_view s) {
  int year = 0, month = 0, day = 0, hour = 0, minute = 0, second = 0, millis = 0;
  if (!read_int(s, 0, 4, year) || s.size() < 10 || s[4] != '-' || !read_int(s, 5, 2, month) ||
      s[7] != '-' || !read_int(s, 8, 2, day))
    return std::nullopt;
  std::size_t pos = 10;
  if (pos < s.size()) {
    if (s[pos] != 'T' && s[pos] != ' ') return std::nullopt;
    if (!read_int(s, pos + 1, 2, hour) || s.size() < pos + 9 || s[pos + 3] != ':' ||
        !read_int(s, pos + 4, 2, minute) || s[pos + 6] != ':' || !read_int(s, pos + 7, 2, second))
      return std::nullopt;
    pos += 9;
    if (pos < s.size() && s[pos] == '.') {
      std::size_t digits = 0;
      int frac = 0;
      ++pos;
      while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
        if (digits < 3) frac = frac * 10 + (s[pos] - '0');
        ++digits;
        ++pos;
      }
      if (digits == 0) return std::nullopt;
      for (auto d = digits; d < 3; ++d) frac *= 10;
      millis = frac;
    }
    if (pos < s.size() && s[pos] == 'Z') ++pos;
    if (pos != s.size()) return std::nullopt;
  }
  if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59 || second > 60)
    return std::nullopt;
  std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{unsigned(month)},
                                  std::chrono::day{unsigned(day)}};
  if (!ymd.ok()) return std::nullopt;
  auto days = std::chrono::sys_days{ymd};
  return std::chrono::time_point_cast<Millis>(days) + std::chrono::hours{hour} +
         std::chrono::minutes{minute} + std::chrono::seconds{second} + Millis{millis};
}

std::string format_iso8601(TimePoint t) {
  auto days = std::chrono::floor<std::chrono::days>(t);
  std::chrono::year_month_day ymd{days};
  auto rem = t - days;
  auto h = std::chrono::duration_cast<std::chrono::hours>(rem);
  rem -= h;
  auto m = std::chrono::duration_cast<std::chrono::minutes>(rem);
  rem -= m;
  auto sec = std::chrono::duration_cast<std::chrono::seconds>(rem);
  rem -= sec;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", int(ymd.year()),
                unsigned(ymd.month()), unsigned(ymd.day()), int(h.count()), int(m.count()),
                int(sec.count()), int(rem.count()));
  return buf;
}

std::string format_date(TimePoint t) { return format_iso8601(t).substr(0, 10); }

std::optional<Millis> parse_duration(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::size_t i = 0;
  while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
  if (i == 0) return std::nullopt;
  std::int64_t n = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + i, n);
  if (ec != std::errc{}) return std::nullopt;
  auto unit = s.substr(i);
  if (unit.empty() || unit == "s") return Millis{n * 1000};
  if (unit == "ms") return Millis{n};
  if (unit == "m") return Millis{n * 60'000};
  if (unit == "h") return Millis{n * 3'600'000};
  if (unit == "d") return Millis{n * 86'400'000};
  return std::nullopt;
}

std::string format_duration(Millis d) {
  auto ms = d.count();
  if (ms % 86'400'000 == 0 && ms != 0) return std::to_string(ms / 86'400'000) + "d";
  if (ms % 3'600'000 == 0 && ms != 0) return std::to_string(ms / 3'600'000) + "h";
  if (ms % 60'000 == 0 && ms != 0) return std::to_string(ms / 60'000) + "m";
  if (ms % 1000 == 0) return std::to_string(ms / 1000) + "s";
  return std::to_string(ms) + "ms";
}

}  // namespace follower
