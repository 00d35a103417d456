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

#include "follower/store.h"

#include <sqlite3.h>

#include "follower/errors.h"

namespace follower {

std::string_view kind_name(DependencyKind k) {
  switch (k) {
    case DependencyKind::runtime: return "runtime";
    case DependencyKind::dev: return "dev";
    case DependencyKind::peer: return "peer";
    case DependencyKind::optional: return "optional";
  }
  return "runtime";
}

std::optional<DependencyKind> parse_kind(std::string_view s) {
  if (s == "runtime") return DependencyKind::runtime;
  if (s == "dev") return DependencyKind::dev;
  if (s == "peer") return DependencyKind::peer;
  if (s == "optional") return DependencyKind::optional;
  return std::nullopt;
}

namespace {

[[noreturn]] void throw_sqlite(sqlite3* db, int rc, std::string_view what) {
  std::string msg = std::string(what) + ": " + (db ? sqlite3_errmsg(db) : sqlite3_errstr(rc));
  int primary = rc & 0xff;
  if (primary == SQLITE_CONSTRAINT) throw Error(Errc::constraint_violation, msg);
  if (primary == SQLITE_BUSY || primary == SQLITE_LOCKED || primary == SQLITE_IOERR || primary == SQLITE_CANTOPEN)
    throw Error(Errc::store_unavailable, msg);
  throw Error(Errc::invalid_argument, msg);
}

}  // namespace

// -- Statement -----------------------------------------------------------------

Statement::Statement(sqlite3* db, std::string_view sql) : db_(db) {
  int rc = sqlite3_prepare_v2(db, sql.data(), int(sql.size()), &stmt_, nullptr);
  if (rc != SQLITE_OK) throw_sqlite(db, rc, "prepare");
  if (!stmt_) throw Error(Errc::invalid_argument, "empty statement");
}

Statement::~Statement() {
  if (stmt_) sqlite3_finalize(stmt_);
}

Statement& Statement::bind(int idx, std::int64_t v) {
  sqlite3_bind_int64(stmt_, idx, v);
  return *this;
}

Statement& Statement::bind(int idx, double v) {
  sqlite3_bind_double(stmt_, idx, v);
  return *this;
}

Statement& Statement::bind(int idx, std::string_view v) {
  sqlite3_bind_text(stmt_, idx, v.data(), int(v.size()), SQLITE_TRANSIENT);
  return *this;
}

Statement& Statement::bind(int idx, std::nullopt_t) {
  sqlite3_bind_null(stmt_, idx);
  return *this;
}

bool Statement::step() {
  int rc = sqlite3_step(stmt_);
  if (rc == SQLITE_ROW) return true;
  if (rc == SQLITE_DONE) return false;
  throw_sqlite(db_, rc, "step");
}

int Statement::column_count() const { return sqlite3_column_count(stmt_); }
std::string Statement::column_name(int col) const { return sqlite3_column_name(stmt_, col); }
bool Statement::is_null(int col) const { return sqlite3_column_type(stmt_, col) == SQLITE_NULL; }
std::int64_t Statement::int_at(int col) const { return sqlite3_column_int64(stmt_, col); }
double Statement::double_at(int col) const { return sqlite3_column_double(stmt_, col); }

std::string Statement::text_at(int col) const {
  auto* p = reinterpret_cast<const char*>(sqlite3_column_text(stmt_, col));
  return p ? std::string(p, sqlite3_column_bytes(stmt_, col)) : std::string();
}

std::optional<std::string> Statement::opt_text_at(int col) const {
  if (is_null(col)) return std::nullopt;
  return text_at(col);
}

std::optional<std::int64_t> Statement::opt_int_at(int col) const {
  if (is_null(col)) return std::nullopt;
  return int_at(col);
}

void Statement::reset() {
  sqlite3_reset(stmt_);
  sqlite3_clear_bindings(stmt_);
}

bool Statement::read_only() const { return sqlite3_stmt_readonly(stmt_) != 0; }

// -- MetadataStore -------------------------------------------------------------

MetadataStore::MetadataStore(const std::string& path) {
  int rc = sqlite3_open_v2(path.c_str(), &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_NOMUTEX,
                           nullptr);
  if (rc != SQLITE_OK) {
    std::string msg = db_ ? sqlite3_errmsg(db_) : "open failed";
    sqlite3_close(db_);
    db_ = nullptr;
    throw Error(Errc::store_unavailable, "cannot open store '" + path + "': " + msg);
  }
  sqlite3_busy_timeout(db_, 10'000);
  const bool memory = path == ":memory:" || path.empty();
  if (!memory) exec("PRAGMA journal_mode = WAL; PRAGMA synchronous = NORMAL;");
  exec(kSchemaSql);
  auto analysis = memory ? std::string(":memory:") : path + ".analysis";
  prepare("ATTACH DATABASE ?1 AS metadata_analysis").bind(1, analysis).run();
  exec(kAnalysisSchemaSql);
  if (count("schema_version") == 0) exec("INSERT INTO schema_version(version) VALUES (1)");
}

MetadataStore::~MetadataStore() {
  if (db_) sqlite3_close_v2(db_);
}

void MetadataStore::exec(std::string_view sql) {
  std::lock_guard lock(mu_);
  char* err = nullptr;
  std::string s(sql);
  int rc = sqlite3_exec(db_, s.c_str(), nullptr, nullptr, &err);
  if (rc != SQLITE_OK) {
    std::string msg = err ? err : "exec failed";
    sqlite3_free(err);
    int primary = rc & 0xff;
    throw Error(primary == SQLITE_CONSTRAINT ? Errc::constraint_violation
                : primary == SQLITE_BUSY     ? Errc::store_unavailable
                                             : Errc::invalid_argument,
                msg);
  }
}

Statement MetadataStore::prepare(std::string_view sql) { return Statement(db_, sql); }

QueryResult MetadataStore::query(std::string_view sql) {
  std::lock_guard lock(mu_);
  auto stmt = prepare(sql);
  if (!stmt.read_only()) throw Error(Errc::invalid_argument, "query() accepts read-only statements only");
  QueryResult out;
  for (int c = 0; c < stmt.column_count(); ++c) out.columns.push_back(stmt.column_name(c));
  while (stmt.step()) {
    auto& row = out.rows.emplace_back();
    for (int c = 0; c < stmt.column_count(); ++c) row.push_back(stmt.opt_text_at(c));
  }
  return out;
}

MetadataStore::Transaction::Transaction(MetadataStore& store)
    : store_(store), lock_(store.mu_), depth_(store.tx_depth_) {
  if (depth_ == 0) store_.exec("BEGIN IMMEDIATE");
  else store_.exec("SAVEPOINT sp" + std::to_string(depth_));
  ++store_.tx_depth_;
}

void MetadataStore::Transaction::commit() {
  if (done_) return;
  if (depth_ == 0) store_.exec("COMMIT");
  else store_.exec("RELEASE sp" + std::to_string(depth_));
  done_ = true;
  --store_.tx_depth_;
}

MetadataStore::Transaction::~Transaction() {
  if (done_) return;
  try {
    if (depth_ == 0) {
      store_.exec("ROLLBACK");
    } else {
      auto sp = "sp" + std::to_string(depth_);
      store_.exec("ROLLBACK TO " + sp + "; RELEASE " + sp);
    }
  } catch (...) {
  }
  --store_.tx_depth_;
}

std::int64_t MetadataStore::count(std::string_view table, std::string_view where) {
  std::lock_guard lock(mu_);
  std::string sql = "SELECT count(*) FROM " + std::string(table);
  if (!where.empty()) sql += " WHERE " + std::string(where);
  auto stmt = prepare(sql);
  stmt.step();
  return stmt.int_at(0);
}

std::optional<std::int64_t> MetadataStore::package_id(std::string_view name) {
  std::lock_guard lock(mu_);
  auto stmt = prepare("SELECT id FROM packages WHERE name = ?1");
  stmt.bind(1, name);
  if (!stmt.step()) return std::nullopt;
  return stmt.int_at(0);
}

std::optional<PackageState> MetadataStore::load_package_state(std::string_view name) {
  std::lock_guard lock(mu_);
  auto pkg = prepare("SELECT id, deleted FROM packages WHERE name = ?1");
  pkg.bind(1, name);
  if (!pkg.step()) return std::nullopt;
  PackageState state{pkg.int_at(0), std::string(name), pkg.int_at(1) != 0, {}};
  auto vs = prepare(
      "SELECT id, version, manifest_digest, deleted, generation FROM versions "
      "WHERE package_id = ?1 AND superseded = 0 ORDER BY id");
  vs.bind(1, state.id);
  while (vs.step())
    state.versions.push_back({vs.int_at(0), vs.text_at(1), vs.text_at(2), vs.int_at(3) != 0, int(vs.int_at(4))});
  return state;
}

std::vector<std::string> MetadataStore::live_package_names() {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  auto stmt = prepare("SELECT name FROM packages WHERE deleted = 0 ORDER BY name");
  while (stmt.step()) out.push_back(stmt.text_at(0));
  return out;
}

std::int64_t MetadataStore::upsert_package(std::string_view name, const std::optional<std::string>& seq) {
  std::lock_guard lock(mu_);
  prepare("INSERT INTO packages(name, latest_known_seq) VALUES (?1, ?2) ON CONFLICT(name) DO NOTHING")
      .bind_all(name, seq)
      .run();
  if (seq) prepare("UPDATE packages SET latest_known_seq = ?2 WHERE name = ?1").bind_all(name, *seq).run();
  return *package_id(name);
}

bool MetadataStore::set_package_deleted(std::int64_t package_id, bool deleted, TimePoint at) {
  std::lock_guard lock(mu_);
  prepare(
      "UPDATE packages SET deleted = ?2, deleted_at = CASE WHEN ?2 THEN ?3 ELSE NULL END "
      "WHERE id = ?1 AND deleted != ?2")
      .bind_all(package_id, deleted, to_epoch_ms(at))
      .run();
  return sqlite3_changes(db_) > 0;
}

MetadataStore::VersionUpsert MetadataStore::upsert_version(std::int64_t package_id, const VersionManifest& m,
                                                           TimePoint ingest_time) {
  Transaction tx(*this);
  VersionUpsert result;
  int generation = 0;
  auto cur = prepare(
      "SELECT id, manifest_digest, deleted, generation FROM versions "
      "WHERE package_id = ?1 AND version = ?2 AND superseded = 0");
  cur.bind_all(package_id, m.version_string);
  if (cur.step()) {
    if (cur.text_at(1) == m.digest && cur.int_at(2) == 0) {
      result.id = cur.int_at(0);
      tx.commit();
      return result;
    }
    result.superseded_id = cur.int_at(0);
    generation = int(cur.int_at(3)) + 1;
    prepare("UPDATE versions SET superseded = 1 WHERE id = ?1").bind(1, *result.superseded_id).run();
  }
  const bool from_manifest = m.published_at.has_value();
  auto ins = prepare(
      "INSERT INTO versions(package_id, version, major, minor, patch, prerelease, generation, published_at, "
      "published_at_source, tarball_url, repository_host, repository_owner, repository_name, manifest_digest, "
      "extra_metadata) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11, ?12, ?13, ?14, ?15)");
  ins.bind_all(package_id, m.version_string, std::int64_t(m.version.major), std::int64_t(m.version.minor),
               std::int64_t(m.version.patch), m.version.prerelease_string(), generation,
               to_epoch_ms(m.published_at.value_or(ingest_time)), from_manifest ? "manifest" : "ingest");
  ins.bind(10, m.tarball_url);
  if (m.repository) ins.bind(11, m.repository->host).bind(12, m.repository->owner).bind(13, m.repository->name);
  else ins.bind(11, std::nullopt).bind(12, std::nullopt).bind(13, std::nullopt);
  ins.bind(14, m.digest).bind(15, m.extra_metadata.dump());
  ins.run();
  result.id = sqlite3_last_insert_rowid(db_);
  result.inserted = true;
  tx.commit();
  return result;
}

int MetadataStore::upsert_dependencies(std::int64_t version_id, const std::vector<DependencySpec>& deps) {
  Transaction tx(*this);
  auto existing = prepare("SELECT count(*) FROM dependencies WHERE version_id = ?1");
  existing.bind(1, version_id).step();
  if (existing.int_at(0) > 0) {
    tx.commit();
    return 0;
  }
  auto ins = prepare(
      "INSERT INTO dependencies(version_id, depends_on_name, constraint_raw, constraint_dnf, kind) "
      "VALUES (?1, ?2, ?3, ?4, ?5)");
  auto term = prepare(
      "INSERT INTO constraint_terms(dependency_id, disjunct, op, major, minor, patch, prerelease) "
      "VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)");
  int inserted = 0;
  for (const auto& d : deps) {
    std::optional<std::string> dnf;
    if (d.constraint) dnf = d.constraint->to_string();
    ins.reset();
    ins.bind_all(version_id, d.name, d.constraint_raw, dnf, kind_name(d.kind)).run();
    auto dep_id = sqlite3_last_insert_rowid(db_);
    ++inserted;
    if (!d.constraint) continue;
    for (std::size_t i = 0; i < d.constraint->disjuncts.size(); ++i) {
      for (const auto& c : d.constraint->disjuncts[i]) {
        term.reset();
        term.bind_all(dep_id, std::int64_t(i), semver::op_symbol(c.op), std::int64_t(c.bound.major),
                   std::int64_t(c.bound.minor), std::int64_t(c.bound.patch), c.bound.prerelease_string())
            .run();
      }
    }
  }
  tx.commit();
  return inserted;
}

bool MetadataStore::flag_version_deleted(std::int64_t package_id, std::string_view version, TimePoint at) {
  std::lock_guard lock(mu_);
  prepare(
      "UPDATE versions SET deleted = 1, deleted_at = ?3 "
      "WHERE package_id = ?1 AND version = ?2 AND superseded = 0 AND deleted = 0")
      .bind_all(package_id, version, to_epoch_ms(at))
      .run();
  return sqlite3_changes(db_) > 0;
}

std::optional<std::string> MetadataStore::cursor(std::string_view feed) {
  std::lock_guard lock(mu_);
  auto stmt = prepare("SELECT cursor FROM feed_cursors WHERE feed = ?1");
  stmt.bind(1, feed);
  if (!stmt.step()) return std::nullopt;
  return stmt.text_at(0);
}

void MetadataStore::set_cursor(std::string_view feed, std::string_view seq) {
  std::lock_guard lock(mu_);
  prepare("INSERT INTO feed_cursors(feed, cursor) VALUES (?1, ?2) ON CONFLICT(feed) DO UPDATE SET cursor = ?2")
      .bind_all(feed, seq)
      .run();
}

void MetadataStore::record_dead_letter(std::string_view feed, std::string_view seq, std::string_view package_name,
                                       std::string_view raw, std::string_view error, TimePoint at) {
  std::lock_guard lock(mu_);
  prepare(
      "INSERT INTO dead_letters(feed, seq, package_name, raw, error, recorded_at) "
      "VALUES (?1, ?2, ?3, ?4, ?5, ?6)")
      .bind_all(feed, seq, package_name, raw, error, to_epoch_ms(at))
      .run();
}

std::vector<MetricPoint> MetadataStore::metric_series(std::int64_t package_id) {
  std::lock_guard lock(mu_);
  auto stmt = prepare("SELECT download_counts FROM download_metrics WHERE package_id = ?1");
  stmt.bind(1, package_id);
  std::vector<MetricPoint> out;
  if (!stmt.step()) return out;
  for (const auto& p : nlohmann::json::parse(stmt.text_at(0)))
    out.push_back({p.at("week_start").get<std::string>(), p.at("counter").get<std::int64_t>()});
  return out;
}

bool MetadataStore::append_metric_point(std::int64_t package_id, const MetricPoint& point) {
  Transaction tx(*this);
  auto series = metric_series(package_id);
  // ISO dates order lexicographically.
  if (!series.empty() && series.back().week_start >= point.week_start) {
    tx.commit();
    return false;
  }
  series.push_back(point);
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : series) arr.push_back({{"week_start", p.week_start}, {"counter", p.counter}});
  prepare(
      "INSERT INTO download_metrics(package_id, download_counts) VALUES (?1, ?2) "
      "ON CONFLICT(package_id) DO UPDATE SET download_counts = ?2")
      .bind_all(package_id, arr.dump())
      .run();
  tx.commit();
  return true;
}

void MetadataStore::record_metric_failure(std::string_view package_name, std::int64_t sweep_id,
                                          std::string_view error, TimePoint at) {
  std::lock_guard lock(mu_);
  prepare("INSERT INTO metric_failures(package_name, sweep_id, error, recorded_at) VALUES (?1, ?2, ?3, ?4)")
      .bind_all(package_name, sweep_id, error, to_epoch_ms(at))
      .run();
}

void MetadataStore::upsert_advisory(const Advisory& a) {
  std::lock_guard lock(mu_);
  nlohmann::json ranges = nlohmann::json::array();
  for (const auto& r : a.affected_ranges) {
    nlohmann::json item = {{"raw", r.raw}, {"dnf", nullptr}};
    if (r.constraint) item["dnf"] = r.constraint->to_string();
    ranges.push_back(item);
  }
  std::optional<std::int64_t> modified;
  if (a.modified) modified = to_epoch_ms(*a.modified);
  prepare(
      "INSERT INTO vulnerabilities(advisory_id, package_name, severity, cwes, affected_ranges, withdrawn, "
      "modified_at) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7) "
      "ON CONFLICT(advisory_id, package_name) DO UPDATE SET severity = ?3, cwes = ?4, affected_ranges = ?5, "
      "withdrawn = max(withdrawn, ?6), modified_at = ?7")
      .bind_all(a.advisory_id, a.package_name, a.severity, nlohmann::json(a.cwes).dump(), ranges.dump(),
                a.withdrawn, modified)
      .run();
}

std::vector<Advisory> MetadataStore::advisories() {
  std::lock_guard lock(mu_);
  std::vector<Advisory> out;
  auto stmt = prepare(
      "SELECT advisory_id, package_name, severity, cwes, affected_ranges, withdrawn, modified_at "
      "FROM vulnerabilities ORDER BY advisory_id, package_name");
  while (stmt.step()) {
    Advisory a;
    a.advisory_id = stmt.text_at(0);
    a.package_name = stmt.text_at(1);
    a.severity = stmt.text_at(2);
    a.cwes = nlohmann::json::parse(stmt.text_at(3)).get<std::vector<std::string>>();
    for (const auto& r : nlohmann::json::parse(stmt.text_at(4))) {
      AffectedRange range{r.at("raw").get<std::string>(), std::nullopt};
      if (!r.at("dnf").is_null()) range.constraint = semver::parse_constraint(r.at("dnf").get<std::string>());
      a.affected_ranges.push_back(std::move(range));
    }
    a.withdrawn = stmt.int_at(5) != 0;
    if (auto m = stmt.opt_int_at(6)) a.modified = from_epoch_ms(*m);
    out.push_back(std::move(a));
  }
  return out;
}

std::optional<std::string> MetadataStore::scraper_state(std::string_view name) {
  std::lock_guard lock(mu_);
  auto stmt = prepare("SELECT value FROM scraper_state WHERE name = ?1");
  stmt.bind(1, name);
  if (!stmt.step()) return std::nullopt;
  return stmt.text_at(0);
}

void MetadataStore::set_scraper_state(std::string_view name, std::string_view value) {
  std::lock_guard lock(mu_);
  prepare("INSERT INTO scraper_state(name, value) VALUES (?1, ?2) ON CONFLICT(name) DO UPDATE SET value = ?2")
      .bind_all(name, value)
      .run();
}

}  // namespace follower
