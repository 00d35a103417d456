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

#include "follower/semver.h"

#include <algorithm>
#include <charconv>

#include "follower/errors.h"

namespace follower::semver {

namespace {

// Numbers beyond this are rejected, like the JavaScript resolvers whose
// ranges we ingest; it also keeps "+1" upper bounds from overflowing.
constexpr std::uint64_t kMaxNumber = (std::uint64_t{1} << 53) - 1;

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_ident_char(char c) {
  return is_digit(c) || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '-';
}
bool all_digits(std::string_view s) { return !s.empty() && std::all_of(s.begin(), s.end(), is_digit); }

std::optional<std::uint64_t> parse_number(std::string_view s) {
  if (!all_digits(s)) return std::nullopt;
  if (s.size() > 1 && s[0] == '0') return std::nullopt;
  std::uint64_t n = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
  if (ec != std::errc{} || n > kMaxNumber) return std::nullopt;
  return n;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_prerelease(std::string_view s, std::vector<Identifier>& out) {
  for (auto part : split(s, '.')) {
    if (part.empty() || !std::all_of(part.begin(), part.end(), is_ident_char)) return false;
    if (all_digits(part)) {
      auto n = parse_number(part);
      if (!n) return false;
      out.push_back(Identifier::from_number(*n));
    } else {
      out.push_back(Identifier::from_text(std::string(part)));
    }
  }
  return true;
}

bool parse_build(std::string_view s, std::vector<std::string>& out) {
  for (auto part : split(s, '.')) {
    if (part.empty() || !std::all_of(part.begin(), part.end(), is_ident_char)) return false;
    out.emplace_back(part);
  }
  return true;
}

// Splits "core[-pre][+build]"; returns false when a section is malformed.
bool split_suffixes(std::string_view s, std::string_view& core, std::vector<Identifier>& pre,
                    std::vector<std::string>& build) {
  auto plus = s.find('+');
  if (plus != std::string_view::npos) {
    if (!parse_build(s.substr(plus + 1), build)) return false;
    s = s.substr(0, plus);
  }
  auto dash = s.find('-');
  if (dash != std::string_view::npos) {
    if (!parse_prerelease(s.substr(dash + 1), pre)) return false;
    s = s.substr(0, dash);
  }
  core = s;
  return true;
}

// A possibly partial version from range syntax; nullopt components are
// wildcards ("x", "X", "*") or missing.
struct Partial {
  std::optional<std::uint64_t> major, minor, patch;
  std::vector<Identifier> prerelease;

  bool full() const { return patch.has_value(); }
  Version lower() const { return {*major, minor.value_or(0), patch.value_or(0), prerelease, {}}; }
  // Exclusive upper bound of the partial's own span (only when not full).
  Version next() const {
    if (!minor) return Version::core(*major + 1, 0, 0);
    return Version::core(*major, *minor + 1, 0);
  }
};

bool is_wildcard(std::string_view s) { return s == "x" || s == "X" || s == "*"; }

std::optional<Partial> parse_partial(std::string_view s) {
  while (!s.empty() && (s.front() == 'v' || s.front() == 'V' || s.front() == '=')) s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  std::string_view core;
  Partial p;
  std::vector<std::string> build;
  if (!split_suffixes(s, core, p.prerelease, build)) return std::nullopt;
  auto parts = split(core, '.');
  if (parts.size() > 3) return std::nullopt;
  std::optional<std::uint64_t>* slots[3] = {&p.major, &p.minor, &p.patch};
  bool wild = false;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (is_wildcard(parts[i])) {
      wild = true;
      continue;
    }
    auto n = parse_number(parts[i]);
    if (!n) return std::nullopt;
    if (!wild) *slots[i] = *n;  // components after a wildcard are ignored
  }
  if (!p.prerelease.empty() && !p.full()) return std::nullopt;
  if (!build.empty() && !p.full()) return std::nullopt;
  return p;
}

[[noreturn]] void malformed(std::string_view input, std::string_view why) {
  throw Error(Errc::malformed_range, "malformed range '" + std::string(input) + "': " + std::string(why));
}

Comparator cmp(Op op, Version v) { return {op, std::move(v)}; }

Comparator empty_set() {
  return cmp(Op::lt, Version{0, 0, 0, {Identifier::from_number(0)}, {}});
}

void desugar_primitive(std::string_view op, const Partial& p, Conjunct& out) {
  if (!p.major) {
    if (op == "<" || op == ">") out.push_back(empty_set());
    return;
  }
  if (op.empty() || op == "=") {
    if (p.full()) {
      out.push_back(cmp(Op::eq, p.lower()));
    } else {
      out.push_back(cmp(Op::ge, p.lower()));
      out.push_back(cmp(Op::lt, p.next()));
    }
    return;
  }
  if (p.full()) {
    Op o = op == ">=" ? Op::ge : op == ">" ? Op::gt : op == "<=" ? Op::le : Op::lt;
    out.push_back(cmp(o, p.lower()));
    return;
  }
  if (op == ">") out.push_back(cmp(Op::ge, p.next()));
  else if (op == ">=") out.push_back(cmp(Op::ge, p.lower()));
  else if (op == "<") out.push_back(cmp(Op::lt, p.lower()));
  else out.push_back(cmp(Op::lt, p.next()));  // "<="
}

void desugar_tilde(const Partial& p, Conjunct& out) {
  if (!p.major) return;
  out.push_back(cmp(Op::ge, p.lower()));
  if (!p.minor) out.push_back(cmp(Op::lt, Version::core(*p.major + 1, 0, 0)));
  else out.push_back(cmp(Op::lt, Version::core(*p.major, *p.minor + 1, 0)));
}

void desugar_caret(const Partial& p, Conjunct& out) {
  if (!p.major) return;
  out.push_back(cmp(Op::ge, p.lower()));
  const auto M = *p.major;
  if (!p.minor) {
    out.push_back(cmp(Op::lt, Version::core(M + 1, 0, 0)));
  } else if (!p.patch) {
    out.push_back(cmp(Op::lt, M == 0 ? Version::core(0, *p.minor + 1, 0) : Version::core(M + 1, 0, 0)));
  } else if (M != 0) {
    out.push_back(cmp(Op::lt, Version::core(M + 1, 0, 0)));
  } else if (*p.minor != 0) {
    out.push_back(cmp(Op::lt, Version::core(0, *p.minor + 1, 0)));
  } else {
    out.push_back(cmp(Op::lt, Version::core(0, 0, *p.patch + 1)));
  }
}

bool is_operator_token(std::string_view t) {
  return t == ">=" || t == "<=" || t == ">" || t == "<" || t == "=" || t == "~" || t == "~>" || t == "^";
}

std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> raw;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) raw.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return raw;
}

Conjunct parse_conjunct(std::string_view input, std::string_view s) {
  Conjunct out;
  auto raw = tokenize(s);
  if (raw.size() == 3 && raw[1] == "-") {
    auto from = parse_partial(raw[0]);
    auto to = parse_partial(raw[2]);
    if (!from || !to) malformed(input, "bad hyphen range bound");
    if (from->major) out.push_back(cmp(Op::ge, from->lower()));
    if (to->major) {
      if (to->full()) out.push_back(cmp(Op::le, to->lower()));
      else out.push_back(cmp(Op::lt, to->next()));
    }
    return out;
  }
  // Glue "op version" pairs written with a space ("> 1.2.3", "~ 1.2").
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (is_operator_token(raw[i]) && i + 1 < raw.size() && !is_operator_token(raw[i + 1])) {
      tokens.push_back(raw[i] + raw[i + 1]);
      ++i;
    } else {
      tokens.push_back(raw[i]);
    }
  }
  for (std::string_view tok : tokens) {
    std::string_view op;
    for (std::string_view candidate : {">=", "<=", "~>", ">", "<", "=", "~", "^"}) {
      if (tok.starts_with(candidate)) {
        op = candidate;
        break;
      }
    }
    auto partial = parse_partial(tok.substr(op.size()));
    if (!partial) malformed(input, "unparseable token '" + std::string(tok) + "'");
    if (op == "~" || op == "~>") desugar_tilde(*partial, out);
    else if (op == "^") desugar_caret(*partial, out);
    else desugar_primitive(op, *partial, out);
  }
  return out;
}

}  // namespace

std::strong_ordering compare(const Identifier& a, const Identifier& b) {
  if (a.numeric && b.numeric) return a.number <=> b.number;
  if (a.numeric) return std::strong_ordering::less;
  if (b.numeric) return std::strong_ordering::greater;
  return a.text.compare(b.text) <=> 0;
}

std::strong_ordering compare(const Version& a, const Version& b) {
  if (auto c = a.major <=> b.major; c != 0) return c;
  if (auto c = a.minor <=> b.minor; c != 0) return c;
  if (auto c = a.patch <=> b.patch; c != 0) return c;
  // A release ranks above all of its prereleases.
  if (a.prerelease.empty() && b.prerelease.empty()) return std::strong_ordering::equal;
  if (a.prerelease.empty()) return std::strong_ordering::greater;
  if (b.prerelease.empty()) return std::strong_ordering::less;
  const auto n = std::min(a.prerelease.size(), b.prerelease.size());
  for (std::size_t i = 0; i < n; ++i)
    if (auto c = compare(a.prerelease[i], b.prerelease[i]); c != 0) return c;
  return a.prerelease.size() <=> b.prerelease.size();
}

std::string Version::prerelease_string() const {
  std::string out;
  for (std::size_t i = 0; i < prerelease.size(); ++i) {
    if (i) out += '.';
    out += prerelease[i].text;
  }
  return out;
}

std::string Version::to_string() const {
  std::string out = std::to_string(major) + '.' + std::to_string(minor) + '.' + std::to_string(patch);
  if (!prerelease.empty()) out += '-' + prerelease_string();
  for (std::size_t i = 0; i < build.size(); ++i) {
    out += i ? '.' : '+';
    out += build[i];
  }
  return out;
}

Version parse_version(std::string_view s) {
  std::string_view core;
  Version v;
  auto fail = [&](std::string_view why) -> Version {
    throw Error(Errc::malformed_version, "malformed version '" + std::string(s) + "': " + std::string(why));
  };
  if (!split_suffixes(s, core, v.prerelease, v.build)) return fail("bad prerelease or build");
  auto parts = split(core, '.');
  if (parts.size() != 3) return fail("expected MAJOR.MINOR.PATCH");
  std::uint64_t* slots[3] = {&v.major, &v.minor, &v.patch};
  for (int i = 0; i < 3; ++i) {
    auto n = parse_number(parts[i]);
    if (!n) return fail("non-numeric or leading-zero component");
    *slots[i] = *n;
  }
  return v;
}

std::optional<Version> try_parse_version(std::string_view s) {
  try {
    return parse_version(s);
  } catch (const Error&) {
    return std::nullopt;
  }
}

std::string_view op_symbol(Op op) {
  switch (op) {
    case Op::ge: return ">=";
    case Op::gt: return ">";
    case Op::le: return "<=";
    case Op::lt: return "<";
    case Op::eq: return "=";
  }
  return "=";
}

bool Comparator::test(const Version& v) const {
  auto c = compare(v, bound);
  switch (op) {
    case Op::ge: return c >= 0;
    case Op::gt: return c > 0;
    case Op::le: return c <= 0;
    case Op::lt: return c < 0;
    case Op::eq: return c == 0;
  }
  return false;
}

std::string Comparator::to_string() const {
  Version b = bound;
  b.build.clear();
  return std::string(op_symbol(op)) + b.to_string();
}

bool operator==(const Comparator& a, const Comparator& b) { return a.op == b.op && a.bound == b.bound; }

bool operator==(const ConstraintDNF& a, const ConstraintDNF& b) { return a.disjuncts == b.disjuncts; }

std::string ConstraintDNF::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < disjuncts.size(); ++i) {
    if (i) out += " || ";
    const auto& conj = disjuncts[i];
    if (conj.empty()) {
      out += '*';
      continue;
    }
    for (std::size_t j = 0; j < conj.size(); ++j) {
      if (j) out += ' ';
      out += conj[j].to_string();
    }
  }
  return out;
}

ConstraintDNF parse_constraint(std::string_view s) {
  ConstraintDNF dnf;
  std::size_t start = 0;
  for (;;) {
    auto pos = s.find("||", start);
    auto part = s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    dnf.disjuncts.push_back(parse_conjunct(s, part));
    if (pos == std::string_view::npos) break;
    start = pos + 2;
  }
  return dnf;
}

std::optional<ConstraintDNF> try_parse_constraint(std::string_view s) {
  try {
    return parse_constraint(s);
  } catch (const Error&) {
    return std::nullopt;
  }
}

bool satisfies(const Version& v, const Conjunct& c) {
  for (const auto& comparator : c)
    if (!comparator.test(v)) return false;
  if (!v.is_prerelease()) return true;
  return std::any_of(c.begin(), c.end(), [&](const Comparator& comparator) {
    return comparator.bound.is_prerelease() && comparator.bound.same_core(v);
  });
}

bool satisfies(const Version& v, const ConstraintDNF& c) {
  return std::any_of(c.disjuncts.begin(), c.disjuncts.end(),
                     [&](const Conjunct& conj) { return satisfies(v, conj); });
}

std::optional<Version> max_satisfying(std::span<const Version> versions, const ConstraintDNF& c) {
  const Version* best = nullptr;
  for (const auto& v : versions)
    if ((!best || compare(v, *best) > 0) && satisfies(v, c)) best = &v;
  if (!best) return std::nullopt;
  return *best;
}

}  // namespace follower::semver
