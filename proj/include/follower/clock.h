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
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace follower {

using Millis = std::chrono::milliseconds;
using TimePoint = std::chrono::sys_time<Millis>;

/// Every component that reads time goes through a Clock so tests can run on
/// a simulated one.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual TimePoint now() const = 0;
  virtual void sleep_for(Millis d) = 0;
  void sleep_until(TimePoint t) {
    auto n = now();
    if (t > n) sleep_for(t - n);
  }
};

class SystemClock final : public Clock {
 public:
  TimePoint now() const override;
  void sleep_for(Millis d) override;
};

/// Deterministic clock: sleeping advances time instantly. Thread-safe; time
/// never moves backwards.
class SimulatedClock final : public Clock {
 public:
  explicit SimulatedClock(TimePoint start = TimePoint{}) : ms_(start.time_since_epoch().count()) {}
  TimePoint now() const override { return TimePoint{Millis{ms_.load()}}; }
  void sleep_for(Millis d) override { advance(d); }
  void advance(Millis d);
  void advance_to(TimePoint t);

 private:
  std::atomic<std::int64_t> ms_;
};

inline std::int64_t to_epoch_ms(TimePoint t) { return t.time_since_epoch().count(); }
inline TimePoint from_epoch_ms(std::int64_t ms) { return TimePoint{Millis{ms}}; }

// "2022-07-12T10:00:00.123Z", "2022-07-12T10:00:00Z", "2022-07-12" (UTC).
std::optional<TimePoint> parse_iso8601(std::string_view s);
std::string format_iso8601(TimePoint t);
std::string format_date(TimePoint t);

// "24h", "30m", "10s", "250ms", "2d", or a bare number of seconds.
std::optional<Millis> parse_duration(std::string_view s);
std::string format_duration(Millis d);

}  // namespace follower
