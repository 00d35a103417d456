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

#include "follower/scrapers.h"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "follower/errors.h"
#include "follower/json_log.h"

namespace follower {

using nlohmann::json;

void RateBudget::validate() const {
  if (requests_per_interval <= 0) throw Error(Errc::config_invalid, "requests_per_interval must be positive");
  if (interval.count() <= 0) throw Error(Errc::config_invalid, "interval must be positive");
  if (batch_size <= 0) throw Error(Errc::config_invalid, "batch_size must be positive");
}

std::size_t SweepPlan::package_count() const {
  std::size_t n = 0;
  for (const auto& b : batches) n += b.size();
  return n;
}

SweepPlan plan_sweep(std::vector<std::string> packages, const RateBudget& budget, TimePoint start) {
  budget.validate();
  std::sort(packages.begin(), packages.end());
  packages.erase(std::unique(packages.begin(), packages.end()), packages.end());
  SweepPlan plan;
  plan.started_at = start;
  std::vector<std::string> current;
  for (auto& name : packages) {
    if (name.find('/') != std::string::npos) {
      plan.batches.push_back({std::move(name)});
      continue;
    }
    current.push_back(std::move(name));
    if (int(current.size()) == budget.batch_size) plan.batches.push_back(std::exchange(current, {}));
  }
  if (!current.empty()) plan.batches.push_back(std::move(current));
  const auto rounds = (std::int64_t(plan.batches.size()) + budget.requests_per_interval - 1) /
                      budget.requests_per_interval;
  plan.estimated_completion = start + budget.interval * rounds;
  return plan;
}

TimePoint SlidingWindowPacer::acquire() {
  for (;;) {
    auto now = clock_.now();
    while (!window_.empty() && window_.front() + interval_ <= now) window_.pop_front();
    if (int(window_.size()) < limit_) {
      window_.push_back(now);
      ++sent_;
      return now;
    }
    clock_.sleep_until(window_.front() + interval_);
  }
}

TimePoint SlidingWindowPacer::drain() {
  if (!window_.empty()) clock_.sleep_until(window_.back() + interval_);
  window_.clear();
  return clock_.now();
}

// -- metrics -------------------------------------------------------------------

MetricsScraper::MetricsScraper(MetadataStore& store, HttpClient& http, Clock& clock, std::string base_url,
                               RateBudget budget)
    : store_(store), http_(http), clock_(clock), base_(std::move(base_url)), budget_(budget) {
  budget_.validate();
}

MetricsBatchResult MetricsScraper::fetch_batch(const std::vector<std::string>& batch, std::int64_t sweep_id) {
  std::string names;
  for (const auto& n : batch) {
    if (!names.empty()) names += ',';
    names += url_encode(n);
  }
  auto resp = http_.get(base_ + "/downloads/point/last-week/" + names);
  if (resp.status == 429) throw Error(Errc::rate_limited, "metrics API returned 429");
  if (resp.status == 0 || resp.status >= 500)
    throw Error(Errc::upstream_error, "metrics API returned " + std::to_string(resp.status));

  MetricsBatchResult result;
  const auto now = clock_.now();
  json body = resp.ok() ? json::parse(resp.body, nullptr, false) : json();
  if (resp.ok() && (body.is_discarded() || !body.is_object()))
    throw Error(Errc::upstream_error, "metrics API returned a malformed body");
  // A single-package request answers with the bare record.
  if (batch.size() == 1 && body.is_object() && body.contains("downloads")) body = json{{batch.front(), body}};

  store_.transact([&] {
    for (const auto& name : batch) {
      const json* rec = nullptr;
      if (body.is_object())
        if (auto it = body.find(name); it != body.end() && it->is_object()) rec = &*it;
      auto pkg = store_.package_id(name);
      if (!rec || !pkg || !rec->contains("downloads") || !(*rec)["downloads"].is_number_integer() ||
          !rec->contains("start") || !(*rec)["start"].is_string()) {
        const std::string why = !resp.ok() ? "HTTP " + std::to_string(resp.status)
                                : !pkg     ? "package not in store"
                                           : "no data returned";
        store_.record_metric_failure(name, sweep_id, why, now);
        result.failed.push_back(name);
        continue;
      }
      MetricPoint p{(*rec)["start"].get<std::string>().substr(0, 10), (*rec)["downloads"].get<std::int64_t>()};
      if (p.counter < 0) {
        store_.record_metric_failure(name, sweep_id, "negative counter", now);
        result.failed.push_back(name);
        continue;
      }
      if (store_.append_metric_point(*pkg, p)) ++result.appended;
      result.points.emplace_back(name, std::move(p));
    }
  });
  return result;
}

SweepReport MetricsScraper::sweep() {
  auto state_int = [&](const char* key) -> std::optional<std::int64_t> {
    if (auto v = store_.scraper_state(key)) return std::stoll(*v);
    return std::nullopt;
  };
  SweepReport report;
  auto progress = state_int("metrics.progress");
  if (progress) {
    report.sweep_id = state_int("metrics.sweep_id").value_or(1);
    report.started_at = from_epoch_ms(state_int("metrics.sweep_started").value_or(to_epoch_ms(clock_.now())));
  } else {
    report.sweep_id = state_int("metrics.sweep_id").value_or(0) + 1;
    report.started_at = clock_.now();
    store_.transact([&] {
      store_.set_scraper_state("metrics.sweep_id", std::to_string(report.sweep_id));
      store_.set_scraper_state("metrics.sweep_started", std::to_string(to_epoch_ms(report.started_at)));
      store_.set_scraper_state("metrics.progress", "0");
    });
    progress = 0;
  }

  auto plan = plan_sweep(store_.live_package_names(), budget_, report.started_at);
  report.packages = plan.package_count();
  report.batches = plan.batches.size();
  report.estimated_completion = plan.estimated_completion;
  log_event(LogLevel::info, "metrics.sweep_start",
            {{"sweep", report.sweep_id}, {"packages", report.packages}, {"batches", report.batches},
             {"resume_from", *progress}, {"estimated_completion", format_iso8601(plan.estimated_completion)}});

  SlidingWindowPacer pacer(clock_, budget_.requests_per_interval, budget_.interval);
  struct Pending {
    std::size_t index;
    int upstream_failures = 0;
  };
  std::deque<Pending> queue;
  for (auto i = std::size_t(*progress); i < plan.batches.size(); ++i) queue.push_back({i});
  std::size_t next_progress = std::size_t(*progress);
  std::vector<bool> finished(plan.batches.size(), false);

  auto complete = [&](std::size_t index) {
    finished[index] = true;
    while (next_progress < finished.size() && finished[next_progress]) ++next_progress;
    store_.set_scraper_state("metrics.progress", std::to_string(next_progress));
  };
  auto give_up = [&](std::size_t index, const std::string& why) {
    store_.transact([&] {
      for (const auto& name : plan.batches[index]) store_.record_metric_failure(name, report.sweep_id, why, clock_.now());
    });
    report.failures += plan.batches[index].size();
  };

  while (!queue.empty()) {
    auto item = queue.front();
    queue.pop_front();
    const auto& batch = plan.batches[item.index];
    int rate_limited = 0;
    for (;;) {
      pacer.acquire();
      ++report.requests;
      try {
        auto r = fetch_batch(batch, report.sweep_id);
        report.points_appended += std::size_t(r.appended);
        report.failures += r.failed.size();
        complete(item.index);
      } catch (const Error& e) {
        if (e.code() == Errc::rate_limited) {
          ++report.rate_limited;
          if (++rate_limited <= max_retries) continue;
          give_up(item.index, "rate limited");
          complete(item.index);
        } else if (e.code() == Errc::upstream_error) {
          ++report.upstream_errors;
          if (++item.upstream_failures <= max_retries) {
            queue.push_back(item);
          } else {
            give_up(item.index, e.what());
            complete(item.index);
          }
        } else {
          throw;
        }
      }
      break;
    }
  }
  report.finished_at = pacer.drain();
  store_.transact([&] {
    store_.set_scraper_state("metrics.last_sweep_finished", std::to_string(to_epoch_ms(report.finished_at)));
    store_.exec("DELETE FROM scraper_state WHERE name = 'metrics.progress'");
  });
  log_event(LogLevel::info, "metrics.sweep_done",
            {{"sweep", report.sweep_id}, {"requests", report.requests}, {"points", report.points_appended},
             {"failures", report.failures}, {"finished_at", format_iso8601(report.finished_at)}});
  return report;
}

// -- advisories ----------------------------------------------------------------

std::vector<std::string> osv_events_to_ranges(const json& events) {
  std::vector<std::string> out;
  if (!events.is_array()) return out;
  std::optional<std::string> lower;
  bool open = false;
  for (const auto& ev : events) {
    if (!ev.is_object()) continue;
    if (auto it = ev.find("introduced"); it != ev.end() && it->is_string()) {
      auto v = it->get<std::string>();
      lower = v == "0" ? std::nullopt : std::optional(v);
      open = true;
      continue;
    }
    for (const char* end_field : {"fixed", "last_affected"}) {
      auto it = ev.find(end_field);
      if (it == ev.end() || !it->is_string() || !open) continue;
      std::string upper = std::string(end_field[0] == 'f' ? "<" : "<=") + it->get<std::string>();
      out.push_back(lower ? ">=" + *lower + " " + upper : upper);
      open = false;
      lower.reset();
    }
  }
  if (open) out.push_back(lower ? ">=" + *lower : "*");
  return out;
}

std::vector<Advisory> parse_osv(const json& doc) {
  if (!doc.is_object() || !doc.contains("id") || !doc["id"].is_string())
    throw Error(Errc::invalid_doc, "advisory without a string id");
  if (!doc.contains("affected") || !doc["affected"].is_array())
    throw Error(Errc::invalid_doc, "advisory " + doc["id"].get<std::string>() + " has no affected list");
  Advisory base;
  base.advisory_id = doc["id"].get<std::string>();
  base.withdrawn = doc.contains("withdrawn") && !doc["withdrawn"].is_null();
  if (doc.contains("modified") && doc["modified"].is_string()) base.modified = parse_iso8601(doc["modified"].get<std::string>());
  if (auto ds = doc.find("database_specific"); ds != doc.end() && ds->is_object()) {
    if (auto s = ds->find("severity"); s != ds->end() && s->is_string()) base.severity = s->get<std::string>();
    if (auto c = ds->find("cwe_ids"); c != ds->end() && c->is_array())
      for (const auto& id : *c)
        if (id.is_string()) base.cwes.push_back(id.get<std::string>());
  }

  std::vector<Advisory> out;
  for (const auto& aff : doc["affected"]) {
    if (!aff.is_object() || !aff.contains("package") || !aff["package"].is_object()) continue;
    const auto& pkg = aff["package"];
    if (!pkg.contains("name") || !pkg["name"].is_string()) continue;
    if (pkg.contains("ecosystem") && pkg["ecosystem"] != "npm") continue;
    const auto name = pkg["name"].get<std::string>();
    auto it = std::find_if(out.begin(), out.end(), [&](const Advisory& a) { return a.package_name == name; });
    if (it == out.end()) {
      out.push_back(base);
      out.back().package_name = name;
      it = out.end() - 1;
    }
    auto add = [&](const std::string& raw) { it->affected_ranges.push_back({raw, semver::try_parse_constraint(raw)}); };
    if (auto ranges = aff.find("ranges"); ranges != aff.end() && ranges->is_array())
      for (const auto& r : *ranges)
        if (r.is_object())
          for (const auto& raw : osv_events_to_ranges(r.value("events", json())))
            add(raw);
    if (auto versions = aff.find("versions"); versions != aff.end() && versions->is_array())
      for (const auto& v : *versions)
        if (v.is_string()) add("=" + v.get<std::string>());
  }
  std::erase_if(out, [](const Advisory& a) { return a.affected_ranges.empty(); });
  return out;
}

AdvisoryScraper::AdvisoryScraper(MetadataStore& store, std::filesystem::path directory)
    : store_(store), directory_(std::move(directory)) {}

AdvisoryScraper::AdvisoryScraper(MetadataStore& store, HttpClient& http, std::string base_url)
    : store_(store), http_(&http), base_(std::move(base_url)) {}

std::vector<json> AdvisoryScraper::fetch(const std::optional<std::string>& since) {
  std::vector<json> docs;
  auto take = [&](json j) {
    if (j.is_array()) {
      for (auto& d : j) docs.push_back(std::move(d));
    } else {
      docs.push_back(std::move(j));
    }
  };
  if (http_) {
    std::string url = base_ + "/advisories";
    if (since) url += "?since=" + url_encode(*since);
    auto resp = http_->get(url);
    if (!resp.ok()) throw Error(Errc::upstream_error, "advisory source returned HTTP " + std::to_string(resp.status));
    auto j = json::parse(resp.body, nullptr, false);
    if (j.is_discarded()) throw Error(Errc::upstream_error, "advisory source returned malformed JSON");
    take(std::move(j));
    return docs;
  }
  std::error_code ec;
  if (!std::filesystem::is_directory(directory_, ec))
    throw Error(Errc::upstream_error, "advisory directory " + directory_.string() + " is not readable");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(directory_))
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    std::stringstream buf;
    buf << in.rdbuf();
    auto j = json::parse(buf.str(), nullptr, false);
    if (j.is_discarded()) {
      log_event(LogLevel::warn, "advisories.bad_file", {{"file", f.string()}});
      docs.push_back(json());  // counted as rejected
      continue;
    }
    take(std::move(j));
  }
  return docs;
}

AdvisorySyncReport AdvisoryScraper::sync() {
  AdvisorySyncReport report;
  auto since = store_.scraper_state("advisories.since");
  auto docs = fetch(since);
  report.documents = docs.size();
  std::optional<TimePoint> newest;
  if (since) newest = parse_iso8601(*since);
  store_.transact([&] {
    for (const auto& doc : docs) {
      std::vector<Advisory> parsed;
      try {
        parsed = parse_osv(doc);
      } catch (const Error& e) {
        ++report.rejected;
        log_event(LogLevel::warn, "advisories.rejected", {{"message", e.what()}});
        continue;
      }
      for (const auto& a : parsed) {
        store_.upsert_advisory(a);
        ++report.advisories;
        if (a.withdrawn) ++report.withdrawn;
        for (const auto& r : a.affected_ranges)
          if (!r.constraint) ++report.unparsed_ranges;
        if (a.modified && (!newest || *a.modified > *newest)) newest = a.modified;
      }
    }
    if (newest && http_) {
      report.cursor = format_iso8601(*newest);
      store_.set_scraper_state("advisories.since", *report.cursor);
    }
  });
  log_event(LogLevel::info, "advisories.sync",
            {{"documents", report.documents}, {"advisories", report.advisories}, {"withdrawn", report.withdrawn},
             {"unparsed_ranges", report.unparsed_ranges}, {"rejected", report.rejected}});
  return report;
}

}  // namespace follower
