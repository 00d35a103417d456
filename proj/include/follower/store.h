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

#include <concepts>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "follower/model.h"

struct sqlite3;
struct sqlite3_stmt;

namespace follower {

extern const char* const kSchemaSql;
extern const char* const kAnalysisSchemaSql;

/// Prepared statement; binds are 1-based like SQLite's.
class Statement {
 public:
  Statement(sqlite3* db, std::string_view sql);
  ~Statement();
  Statement(Statement&& o) noexcept : db_(o.db_), stmt_(o.stmt_) { o.stmt_ = nullptr; }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;

  Statement& bind(int idx, std::int64_t v);
  template <std::integral T>
    requires(!std::same_as<T, std::int64_t>)
  Statement& bind(int idx, T v) {
    return bind(idx, static_cast<std::int64_t>(v));
  }
  Statement& bind(int idx, double v);
  Statement& bind(int idx, std::string_view v);
  Statement& bind(int idx, const std::string& v) { return bind(idx, std::string_view(v)); }
  Statement& bind(int idx, const char* v) { return bind(idx, std::string_view(v)); }
  Statement& bind(int idx, std::nullopt_t);
  template <class T>
  Statement& bind(int idx, const std::optional<T>& v) {
    return v ? bind(idx, *v) : bind(idx, std::nullopt);
  }
  template <class... Args>
  Statement& bind_all(const Args&... args) {
    int i = 0;
    (bind(++i, args), ...);
    return *this;
  }

  /// Returns true while a row is available.
  bool step();
  void reset();
  void run() {
    while (step()) {
    }
  }

  int column_count() const;
  std::string column_name(int col) const;
  bool is_null(int col) const;
  std::int64_t int_at(int col) const;
  double double_at(int col) const;
  std::string text_at(int col) const;
  std::optional<std::string> opt_text_at(int col) const;
  std::optional<std::int64_t> opt_int_at(int col) const;
  bool read_only() const;

 private:
  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

struct QueryResult {
  std::vector<std::string> columns;
  std::vector<std::vector<std::optional<std::string>>> rows;
};

/// Relational persistence of packages, versions, dependencies, metrics,
/// advisories and the download queue. All methods are thread-safe; writes
/// are serialized on one connection.
class MetadataStore {
 public:
  /// `path` may be ":memory:". Analysis tables live in an attached database
  /// named metadata_analysis (`path + ".analysis"` on disk).
  explicit MetadataStore(const std::string& path = ":memory:");
  ~MetadataStore();
  MetadataStore(const MetadataStore&) = delete;
  MetadataStore& operator=(const MetadataStore&) = delete;

  class Transaction {
   public:
    explicit Transaction(MetadataStore& store);
    ~Transaction();
    Transaction(const Transaction&) = delete;
    Transaction& operator=(const Transaction&) = delete;
    void commit();

   private:
    MetadataStore& store_;
    std::unique_lock<std::recursive_mutex> lock_;
    int depth_;
    bool done_ = false;
  };

  template <class F>
  auto transact(F&& f) {
    Transaction tx(*this);
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      tx.commit();
    } else {
      auto r = f();
      tx.commit();
      return r;
    }
  }

  std::recursive_mutex& mutex() { return mu_; }
  void exec(std::string_view sql);
  Statement prepare(std::string_view sql);
  /// Read-only analysis access; rejects statements that would write.
  QueryResult query(std::string_view sql);

  // -- packages and versions ------------------------------------------------

  std::optional<PackageState> load_package_state(std::string_view name);
  std::optional<std::int64_t> package_id(std::string_view name);
  std::vector<std::string> live_package_names();

  /// Inserts the package if new and records the feed position.
  std::int64_t upsert_package(std::string_view name, const std::optional<std::string>& seq = std::nullopt);
  /// Sets or clears the package deleted flag; returns true if it changed.
  bool set_package_deleted(std::int64_t package_id, bool deleted, TimePoint at);

  struct VersionUpsert {
    std::int64_t id = 0;
    bool inserted = false;
    std::optional<std::int64_t> superseded_id;
  };
  /// Idempotent on (package, version, digest). A differing digest or a
  /// previously deleted row yields a new generation and supersedes the old.
  VersionUpsert upsert_version(std::int64_t package_id, const VersionManifest& m, TimePoint ingest_time);
  /// Inserts the edges unless the version already has them; returns rows inserted.
  int upsert_dependencies(std::int64_t version_id, const std::vector<DependencySpec>& deps);
  /// Flags the live row of `version` deleted; returns true if it changed.
  bool flag_version_deleted(std::int64_t package_id, std::string_view version, TimePoint at);

  // -- feed bookkeeping -------------------------------------------------------

  std::optional<std::string> cursor(std::string_view feed);
  void set_cursor(std::string_view feed, std::string_view seq);
  void record_dead_letter(std::string_view feed, std::string_view seq, std::string_view package_name,
                          std::string_view raw, std::string_view error, TimePoint at);

  // -- metrics ---------------------------------------------------------------

  /// Appends unless week_start is not after the last stored point; returns
  /// true when a point was added.
  bool append_metric_point(std::int64_t package_id, const MetricPoint& point);
  std::vector<MetricPoint> metric_series(std::int64_t package_id);
  void record_metric_failure(std::string_view package_name, std::int64_t sweep_id, std::string_view error,
                             TimePoint at);

  // -- advisories ------------------------------------------------------------

  void upsert_advisory(const Advisory& a);
  std::vector<Advisory> advisories();

  std::optional<std::string> scraper_state(std::string_view name);
  void set_scraper_state(std::string_view name, std::string_view value);

  std::int64_t count(std::string_view table, std::string_view where = "");

 private:
  friend class Transaction;
  sqlite3* db_ = nullptr;
  std::recursive_mutex mu_;
  int tx_depth_ = 0;
};

}  // namespace follower
