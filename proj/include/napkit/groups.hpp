#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "napkit/csv.hpp"
#include "napkit/error.hpp"
#include "napkit/manifest.hpp"
#include "napkit/rng.hpp"

namespace napkit {

/// One intersectional group: vocabulary indices for race, age and gender.
struct GroupKey {
  std::size_t race = 0;
  std::size_t age = 0;
  std::size_t gender = 0;

  std::size_t get(Variable v) const {
    switch (v) {
      case Variable::race: return race;
      case Variable::age: return age;
      case Variable::gender: return gender;
    }
    return 0;
  }

  friend auto operator<=>(const GroupKey&, const GroupKey&) = default;
};

// Class ids follow lexicographic (race, age, gender) vocabulary order.
inline std::size_t class_index(const GroupKey& k, const Schema& s) {
  return (k.race * s.size(Variable::age) + k.age) * s.size(Variable::gender) + k.gender;
}

inline GroupKey group_key(std::size_t class_id, const Schema& s) {
  const std::size_t G = s.size(Variable::gender);
  const std::size_t A = s.size(Variable::age);
  return {class_id / (A * G), (class_id / G) % A, class_id % G};
}

inline std::string group_label(const GroupKey& k, const Schema& s) {
  return s.vocabulary(Variable::race)[k.race] + ", " + s.vocabulary(Variable::age)[k.age] + ", " +
         s.vocabulary(Variable::gender)[k.gender];
}

// Filesystem-safe rendering of a category label.
inline std::string slug(const std::string& label) {
  std::string out;
  for (char c : label) {
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '+' ||
        c == '.') {
      out += c;
    } else if (c == '>') {
      out += "gt";
    } else if (c == '<') {
      out += "lt";
    } else if (!out.empty() && out.back() != '-') {
      out += '-';
    }
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out.empty() ? "x" : out;
}

inline std::string group_slug(const GroupKey& k, const Schema& s) {
  return slug(s.vocabulary(Variable::race)[k.race]) + "_" + slug(s.vocabulary(Variable::age)[k.age]) + "_" +
         slug(s.vocabulary(Variable::gender)[k.gender]);
}

/// Example ids per intersectional group. Every key of the schema is present,
/// empty groups included; `groups[class_index(key)]` is sorted ascending.
struct GroupAssignment {
  Schema schema;
  std::vector<std::vector<std::size_t>> groups;
  std::uint64_t seed = 0;

  std::size_t group_count() const { return groups.size(); }
  const std::vector<std::size_t>& members(const GroupKey& k) const { return groups[class_index(k, schema)]; }

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.size();
    return n;
  }

  std::size_t non_empty() const {
    return static_cast<std::size_t>(
        std::count_if(groups.begin(), groups.end(), [](const auto& g) { return !g.empty(); }));
  }
};

inline GroupAssignment build_groups(const Manifest& m) {
  GroupAssignment a;
  a.schema = m.schema;
  a.groups.resize(m.schema.group_count());
  for (const auto& r : m.examples) {
    for (std::size_t v = 0; v < variable_count; ++v) {
      if (r.labels[v] >= m.schema.vocabularies[v].size()) {
        throw Error(ErrorKind::schema, "example_id " + std::to_string(r.example_id) + ": " + variable_names[v] +
                                           " label index outside the vocabulary");
      }
    }
    const GroupKey k{r.labels[0], r.labels[1], r.labels[2]};
    a.groups[class_index(k, m.schema)].push_back(r.example_id);
  }
  for (auto& g : a.groups) std::sort(g.begin(), g.end());
  return a;
}

/// Caps every group at `cap` members by seeded sampling without replacement.
inline GroupAssignment cap_groups(const GroupAssignment& a, std::size_t cap, std::uint64_t seed) {
  if (cap == 0) throw Error(ErrorKind::argument, "cap must be positive");
  GroupAssignment out = a;
  out.seed = seed;
  for (std::size_t c = 0; c < out.groups.size(); ++c) {
    auto& g = out.groups[c];
    if (g.size() <= cap) continue;
    Rng rng(mix_seed(seed, c));
    rng.shuffle(std::span<std::size_t>(g));
    g.resize(cap);
    std::sort(g.begin(), g.end());
  }
  return out;
}

struct FrequencyTable {
  Schema schema;
  std::vector<std::size_t> counts;                    // by class id
  std::vector<std::vector<std::size_t>> age_gender;   // [age][gender]
  std::vector<std::vector<std::size_t>> race_gender;  // [race][gender]
  std::vector<std::vector<std::size_t>> race_age;     // [race][age]
  std::vector<std::size_t> per_race, per_age, per_gender;
  std::size_t total = 0;

  std::size_t count(const GroupKey& k) const { return counts[class_index(k, schema)]; }
};

inline FrequencyTable frequency_table(const GroupAssignment& a) {
  const Schema& s = a.schema;
  const std::size_t R = s.size(Variable::race), A = s.size(Variable::age), G = s.size(Variable::gender);
  FrequencyTable t;
  t.schema = s;
  t.counts.resize(a.groups.size());
  t.age_gender.assign(A, std::vector<std::size_t>(G, 0));
  t.race_gender.assign(R, std::vector<std::size_t>(G, 0));
  t.race_age.assign(R, std::vector<std::size_t>(A, 0));
  t.per_race.assign(R, 0);
  t.per_age.assign(A, 0);
  t.per_gender.assign(G, 0);
  for (std::size_t c = 0; c < a.groups.size(); ++c) {
    const std::size_t n = a.groups[c].size();
    const GroupKey k = group_key(c, s);
    t.counts[c] = n;
    t.age_gender[k.age][k.gender] += n;
    t.race_gender[k.race][k.gender] += n;
    t.race_age[k.race][k.age] += n;
    t.per_race[k.race] += n;
    t.per_age[k.age] += n;
    t.per_gender[k.gender] += n;
    t.total += n;
  }
  return t;
}

/// Table layout: one row per (race, gender) with ages as columns and a row
/// total, then per-gender and per-race column sums, then the age totals with
/// the grand total in the last cell.
inline csv::Writer frequency_csv(const FrequencyTable& t) {
  const Schema& s = t.schema;
  std::vector<std::string> header = {"race", "gender"};
  for (const auto& age : s.vocabulary(Variable::age)) header.push_back(age);
  header.push_back("total");
  csv::Writer w(header);
  const std::size_t R = s.size(Variable::race), A = s.size(Variable::age), G = s.size(Variable::gender);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t g = 0; g < G; ++g) {
      std::vector<std::string> row = {s.vocabulary(Variable::race)[r], s.vocabulary(Variable::gender)[g]};
      for (std::size_t a = 0; a < A; ++a) row.push_back(std::to_string(t.count({r, a, g})));
      row.push_back(std::to_string(t.race_gender[r][g]));
      w.row(row);
    }
  }
  for (std::size_t g = 0; g < G; ++g) {
    std::vector<std::string> row = {"all", s.vocabulary(Variable::gender)[g]};
    for (std::size_t a = 0; a < A; ++a) row.push_back(std::to_string(t.age_gender[a][g]));
    row.push_back(std::to_string(t.per_gender[g]));
    w.row(row);
  }
  for (std::size_t r = 0; r < R; ++r) {
    std::vector<std::string> row = {s.vocabulary(Variable::race)[r], "all"};
    for (std::size_t a = 0; a < A; ++a) row.push_back(std::to_string(t.race_age[r][a]));
    row.push_back(std::to_string(t.per_race[r]));
    w.row(row);
  }
  std::vector<std::string> row = {"all", "all"};
  for (std::size_t a = 0; a < A; ++a) row.push_back(std::to_string(t.per_age[a]));
  row.push_back(std::to_string(t.total));
  w.row(row);
  return w;
}

/// A union of intersectional groups: the fixed variables carry a category
/// index, the free ones are nullopt.
struct UnionSpec {
  std::array<std::optional<std::size_t>, variable_count> fixed;

  std::size_t fixed_count() const {
    return static_cast<std::size_t>(
        std::count_if(fixed.begin(), fixed.end(), [](const auto& f) { return f.has_value(); }));
  }

  bool matches(const GroupKey& k) const {
    for (std::size_t v = 0; v < variable_count; ++v) {
      if (fixed[v] && *fixed[v] != k.get(static_cast<Variable>(v))) return false;
    }
    return true;
  }

  friend auto operator<=>(const UnionSpec&, const UnionSpec&) = default;
};

inline std::string union_label(const UnionSpec& u, const Schema& s) {
  std::string out;
  for (std::size_t v = 0; v < variable_count; ++v) {
    if (v) out += ", ";
    out += u.fixed[v] ? s.vocabularies[v][*u.fixed[v]] : std::string("*");
  }
  return out;
}

inline std::string union_slug(const UnionSpec& u, const Schema& s) {
  std::string out;
  for (std::size_t v = 0; v < variable_count; ++v) {
    if (v) out += "_";
    out += u.fixed[v] ? slug(s.vocabularies[v][*u.fixed[v]]) : std::string("all");
  }
  return out;
}

inline UnionSpec make_union(const Schema& s, const std::map<std::string, std::string>& fixed) {
  UnionSpec u;
  for (const auto& [name, category] : fixed) {
    const Variable v = parse_variable(name);
    const auto idx = s.find(v, category);
    if (idx < 0) throw Error(ErrorKind::argument, "category '" + category + "' not in vocabulary of " + name);
    u.fixed[static_cast<std::size_t>(v)] = static_cast<std::size_t>(idx);
  }
  return u;
}

/// Member class ids of a union, in class order.
inline std::vector<std::size_t> union_members(const Schema& s, const UnionSpec& u) {
  if (u.fixed_count() == 0 || u.fixed_count() == variable_count) {
    throw Error(ErrorKind::argument, "a union must fix one or two of the three variables");
  }
  std::vector<std::size_t> members;
  for (std::size_t c = 0; c < s.group_count(); ++c) {
    if (u.matches(group_key(c, s))) members.push_back(c);
  }
  return members;
}

inline std::vector<std::size_t> union_groups(const GroupAssignment& a, const UnionSpec& u) {
  std::vector<std::size_t> ids;
  for (std::size_t c : union_members(a.schema, u)) ids.insert(ids.end(), a.groups[c].begin(), a.groups[c].end());
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// All unions fixing exactly the variables in `fixed_vars`, keyed by spec.
inline std::map<UnionSpec, std::vector<std::size_t>> union_groups(const GroupAssignment& a,
                                                                  const std::vector<Variable>& fixed_vars) {
  if (fixed_vars.empty() || fixed_vars.size() >= variable_count) {
    throw Error(ErrorKind::argument, "a union must fix one or two of the three variables");
  }
  std::map<UnionSpec, std::vector<std::size_t>> out;
  std::vector<std::size_t> idx(fixed_vars.size(), 0);
  for (;;) {
    UnionSpec u;
    for (std::size_t i = 0; i < fixed_vars.size(); ++i) u.fixed[static_cast<std::size_t>(fixed_vars[i])] = idx[i];
    out.emplace(u, union_groups(a, u));
    std::size_t i = 0;
    for (; i < fixed_vars.size(); ++i) {
      if (++idx[i] < a.schema.size(fixed_vars[i])) break;
      idx[i] = 0;
    }
    if (i == fixed_vars.size()) break;
  }
  return out;
}

/// Every one- and two-variable union of the schema.
inline std::vector<UnionSpec> all_union_specs(const Schema& s) {
  std::vector<UnionSpec> specs;
  const std::vector<std::vector<Variable>> patterns = {{Variable::race},
                                                       {Variable::age},
                                                       {Variable::gender},
                                                       {Variable::race, Variable::age},
                                                       {Variable::race, Variable::gender},
                                                       {Variable::age, Variable::gender}};
  GroupAssignment empty;
  empty.schema = s;
  empty.groups.resize(s.group_count());
  for (const auto& p : patterns) {
    for (const auto& [spec, ids] : union_groups(empty, p)) specs.push_back(spec);
  }
  return specs;
}

}  // namespace napkit
