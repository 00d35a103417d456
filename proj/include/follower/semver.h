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

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace follower::semver {

/// One dot-separated prerelease identifier. Numeric identifiers order
/// numerically and always below alphanumeric ones.
struct Identifier {
  bool numeric = false;
  std::uint64_t number = 0;
  std::string text;

  static Identifier from_number(std::uint64_t n) { return {true, n, std::to_string(n)}; }
  static Identifier from_text(std::string s) { return {false, 0, std::move(s)}; }
};

std::strong_ordering compare(const Identifier& a, const Identifier& b);

struct Version {
  std::uint64_t major = 0;
  std::uint64_t minor = 0;
  std::uint64_t patch = 0;
  std::vector<Identifier> prerelease;
  std::vector<std::string> build;  // never affects ordering

  bool is_prerelease() const { return !prerelease.empty(); }
  bool same_core(const Version& o) const {
    return major == o.major && minor == o.minor && patch == o.patch;
  }
  // Minimal rendering: "1.2.3", "1.0.0-alpha.1", "1.0.0+build5".
  std::string to_string() const;
  std::string prerelease_string() const;

  static Version core(std::uint64_t ma, std::uint64_t mi, std::uint64_t pa) { return {ma, mi, pa, {}, {}}; }
};

std::strong_ordering compare(const Version& a, const Version& b);
inline std::strong_ordering operator<=>(const Version& a, const Version& b) { return compare(a, b); }
inline bool operator==(const Version& a, const Version& b) { return compare(a, b) == 0; }

/// Strict semver grammar: MAJOR.MINOR.PATCH[-pre][+build], no leading zeros
/// on numeric parts. Throws Error(malformed_version).
Version parse_version(std::string_view s);
std::optional<Version> try_parse_version(std::string_view s);

enum class Op { ge, gt, le, lt, eq };
std::string_view op_symbol(Op op);

struct Comparator {
  Op op = Op::eq;
  Version bound;

  bool test(const Version& v) const;
  std::string to_string() const;
};

bool operator==(const Comparator& a, const Comparator& b);

using Conjunct = std::vector<Comparator>;

/// Disjunction of conjunctions of comparators over the candidate version.
/// An empty conjunct is universally true (for release versions).
struct ConstraintDNF {
  std::vector<Conjunct> disjuncts;

  /// Canonical text: comparators joined by spaces, disjuncts by " || ",
  /// the empty conjunct as "*". Re-parses to an equivalent constraint.
  std::string to_string() const;
};

bool operator==(const ConstraintDNF& a, const ConstraintDNF& b);

/// Parses npm-style range syntax: exact versions, comparison operators,
/// caret, tilde, x-ranges, hyphen ranges, whitespace conjunction and `||`.
/// Anything else (tags, URLs, git specs) throws Error(malformed_range).
ConstraintDNF parse_constraint(std::string_view s);
std::optional<ConstraintDNF> try_parse_constraint(std::string_view s);

/// A conjunct matches when every comparator holds. A prerelease version
/// additionally needs some comparator in that conjunct whose bound is a
/// prerelease of the same major.minor.patch.
bool satisfies(const Version& v, const ConstraintDNF& c);
bool satisfies(const Version& v, const Conjunct& c);

std::optional<Version> max_satisfying(std::span<const Version> versions, const ConstraintDNF& c);

}  // namespace follower::semver
