#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "napkit/groups.hpp"
#include "napkit/manifest.hpp"
#include "napkit/rng.hpp"
#include "napkit/synthetic.hpp"

namespace napkit {
namespace {

Manifest manifest_with_sizes(const std::vector<std::size_t>& sizes, const Schema& schema = fairface_schema()) {
  SyntheticOptions opt;
  opt.schema = schema;
  opt.group_sizes = sizes;
  return make_synthetic(opt).manifest;
}

Manifest random_manifest(std::size_t n, std::uint64_t seed, const Schema& schema = fairface_schema()) {
  Manifest m;
  m.schema = schema;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    ExampleRecord r;
    r.example_id = i;
    for (std::size_t v = 0; v < variable_count; ++v) r.labels[v] = rng.below(schema.vocabularies[v].size());
    m.examples.push_back(r);
  }
  return m;
}

TEST(Manifest, ParsesAndValidatesLabels) {
  const Schema s = fairface_schema();
  std::istringstream good(
      "example_id,image_path,race,age,gender\n"
      "0,a.jpg,White,20-29,Female\n"
      "1,\"dir,with,commas/b.jpg\",Indian,more than 70,Male\n");
  const Manifest m = parse_manifest(good, s);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.examples[1].image_path, "dir,with,commas/b.jpg");
  EXPECT_EQ(m.label(m.examples[0], Variable::age), "20-29");

  std::istringstream bad("example_id,image_path,race,age,gender\n0,a.jpg,Martian,20-29,Female\n");
  try {
    parse_manifest(bad, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::schema);
    EXPECT_NE(std::string(e.what()).find("Martian"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("example_id 0"), std::string::npos);
  }

  std::istringstream gap("example_id,image_path,race,age,gender\n0,a,White,0-2,Male\n2,b,White,0-2,Male\n");
  EXPECT_THROW(parse_manifest(gap, s), Error);
}

TEST(Schema, JsonRoundTripAndValidation) {
  const Schema s = fairface_schema();
  EXPECT_EQ(schema_from_json(schema_to_json(s)), s);
  EXPECT_EQ(s.group_count(), 126u);
  auto j = schema_to_json(s);
  j["variables"][1]["name"] = "ethnicity";
  EXPECT_THROW(schema_from_json(j), Error);
}

TEST(BuildGroups, FullyPopulatedFairFaceSchemaHas126Groups) {
  const auto a = build_groups(manifest_with_sizes(std::vector<std::size_t>(126, 3)));
  EXPECT_EQ(a.group_count(), 126u);
  EXPECT_EQ(a.non_empty(), 126u);
}

TEST(BuildGroups, SingleExampleAndDuplicates) {
  const Schema s = fairface_schema();
  Manifest m;
  m.schema = s;
  m.examples.push_back({0, "x", {2, 4, 1}});
  auto a = build_groups(m);
  EXPECT_EQ(a.group_count(), 126u);
  EXPECT_EQ(a.non_empty(), 1u);
  EXPECT_EQ(a.members({2, 4, 1}), (std::vector<std::size_t>{0}));

  m.examples.push_back({1, "y", {2, 4, 1}});
  a = build_groups(m);
  EXPECT_EQ(a.non_empty(), 1u);
  EXPECT_EQ(a.members({2, 4, 1}).size(), 2u);
}

TEST(BuildGroups, OutOfVocabularyLabelNamesExample) {
  Manifest m;
  m.schema = fairface_schema();
  m.examples.push_back({0, "x", {0, 0, 0}});
  m.examples.push_back({1, "y", {0, 9, 0}});
  try {
    build_groups(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::schema);
    EXPECT_NE(std::string(e.what()).find("example_id 1"), std::string::npos);
  }
}

TEST(BuildGroups, IsAPartition) {
  const Manifest m = random_manifest(3000, 5);
  const auto a = build_groups(m);
  std::vector<std::size_t> all;
  for (std::size_t c = 0; c < a.group_count(); ++c) {
    for (auto id : a.groups[c]) {
      const auto& l = m.examples[id].labels;
      EXPECT_EQ(class_index({l[0], l[1], l[2]}, m.schema), c);
      all.push_back(id);
    }
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expect(m.size());
  std::iota(expect.begin(), expect.end(), 0);
  EXPECT_EQ(all, expect);
}

TEST(ClassIndex, LexicographicInSchemaOrder) {
  const Schema s = fairface_schema();
  std::size_t expected = 0;
  for (std::size_t r = 0; r < 7; ++r) {
    for (std::size_t a = 0; a < 9; ++a) {
      for (std::size_t g = 0; g < 2; ++g) {
        EXPECT_EQ(class_index({r, a, g}, s), expected);
        EXPECT_EQ(group_key(expected, s), (GroupKey{r, a, g}));
        ++expected;
      }
    }
  }
  EXPECT_EQ(group_label({0, 3, 1}, s), "White, 20-29, Female");
  EXPECT_EQ(group_slug({6, 8, 1}, s), "Middle-Eastern_more-than-70_Female");
}

TEST(CapGroups, LargeGroupsCappedSmallOnesUnchanged) {
  const Schema s = fairface_schema();
  std::vector<std::size_t> sizes(126, 5);
  const std::size_t big = class_index({0, 3, 1}, s);    // White, 20-29, Female
  const std::size_t small = class_index({6, 8, 1}, s);  // Middle Eastern, >70, Female
  sizes[big] = 2972;
  sizes[small] = 22;
  const auto full = build_groups(manifest_with_sizes(sizes));
  const auto capped = cap_groups(full, 640, 99);
  EXPECT_EQ(capped.groups[big].size(), 640u);
  EXPECT_EQ(capped.groups[small].size(), 22u);
  EXPECT_EQ(capped.groups[small], full.groups[small]);
  EXPECT_TRUE(std::includes(full.groups[big].begin(), full.groups[big].end(), capped.groups[big].begin(),
                            capped.groups[big].end()));
  EXPECT_TRUE(std::is_sorted(capped.groups[big].begin(), capped.groups[big].end()));

  const auto again = cap_groups(full, 640, 99);
  EXPECT_EQ(again.groups, capped.groups);
  EXPECT_EQ(cap_groups(capped, 640, 99).groups, capped.groups);
  EXPECT_NE(cap_groups(full, 640, 100).groups[big], capped.groups[big]);
}

TEST(CapGroups, CapOneAndZero) {
  const auto a = build_groups(manifest_with_sizes(std::vector<std::size_t>(126, 4)));
  const auto one = cap_groups(a, 1, 3);
  for (const auto& g : one.groups) EXPECT_EQ(g.size(), 1u);
  EXPECT_THROW(cap_groups(a, 0, 3), Error);
}

TEST(CapGroups, SamplingIsRoughlyUniform) {
  // Each of 40 members should be kept with probability 10/40 across seeds.
  std::vector<std::size_t> sizes(126, 0);
  sizes[0] = 40;
  const auto a = build_groups(manifest_with_sizes(sizes));
  std::vector<int> hits(40, 0);
  const int trials = 4000;
  for (int s = 0; s < trials; ++s) {
    const auto capped = cap_groups(a, 10, static_cast<std::uint64_t>(s));
    for (auto id : capped.groups[0]) ++hits[id];
  }
  for (int h : hits) EXPECT_NEAR(h / static_cast<double>(trials), 0.25, 0.035);
}

TEST(FrequencyTable, MarginalsMatchBruteForce) {
  const Manifest m = random_manifest(5000, 11);
  const auto t = frequency_table(build_groups(m));
  EXPECT_EQ(t.total, 5000u);
  const Schema& s = m.schema;
  for (std::size_t a = 0; a < 9; ++a) {
    for (std::size_t g = 0; g < 2; ++g) {
      std::size_t n = 0;
      for (const auto& r : m.examples) n += r.labels[1] == a && r.labels[2] == g;
      EXPECT_EQ(t.age_gender[a][g], n);
    }
  }
  for (std::size_t r = 0; r < 7; ++r) {
    for (std::size_t g = 0; g < 2; ++g) {
      std::size_t n = 0;
      for (const auto& e : m.examples) n += e.labels[0] == r && e.labels[2] == g;
      EXPECT_EQ(t.race_gender[r][g], n);
    }
    std::size_t n = 0;
    for (const auto& e : m.examples) n += e.labels[0] == r;
    EXPECT_EQ(t.per_race[r], n);
  }
  std::size_t sum = 0;
  for (auto c : t.counts) sum += c;
  EXPECT_EQ(sum, t.total);
  EXPECT_EQ(std::accumulate(t.per_age.begin(), t.per_age.end(), std::size_t{0}), t.total);
  EXPECT_EQ(std::accumulate(t.per_gender.begin(), t.per_gender.end(), std::size_t{0}), t.total);
  (void)s;
}

TEST(FrequencyTable, EmptyAssignmentIsAllZero) {
  GroupAssignment a;
  a.schema = fairface_schema();
  a.groups.resize(126);
  const auto t = frequency_table(a);
  EXPECT_EQ(t.total, 0u);
  for (auto c : t.counts) EXPECT_EQ(c, 0u);
  for (auto c : t.per_age) EXPECT_EQ(c, 0u);
}

TEST(FrequencyTable, CsvLayout) {
  const auto t = frequency_table(build_groups(manifest_with_sizes(std::vector<std::size_t>(126, 2))));
  const std::string csv = frequency_csv(t).str();
  std::istringstream in(csv);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  // header + 14 (race, gender) rows + 2 gender sums + 7 race sums + grand total row
  ASSERT_EQ(lines.size(), 1u + 14 + 2 + 7 + 1);
  EXPECT_EQ(lines[0], "race,gender,0-2,3-9,10-19,20-29,30-39,40-49,50-59,60-69,more than 70,total");
  EXPECT_EQ(lines[1], "White,Male,2,2,2,2,2,2,2,2,2,18");
  EXPECT_EQ(lines.back(), "all,all,28,28,28,28,28,28,28,28,28,252");
}

TEST(UnionGroups, CountsAndAdditivity) {
  const Manifest m = random_manifest(4000, 17);
  const auto a = build_groups(m);
  const auto t = frequency_table(a);
  const Schema& s = m.schema;

  const UnionSpec young = make_union(s, {{"age", "0-2"}});
  EXPECT_EQ(union_members(s, young).size(), 14u);
  EXPECT_EQ(union_groups(a, young).size(), t.per_age[0]);

  const UnionSpec im = make_union(s, {{"race", "Indian"}, {"gender", "Male"}});
  EXPECT_EQ(union_members(s, im).size(), 9u);
  EXPECT_EQ(union_groups(a, im).size(), t.race_gender[5][0]);

  for (const auto& [spec, ids] : union_groups(a, {Variable::age, Variable::gender})) {
    std::size_t sum = 0;
    for (auto c : union_members(s, spec)) sum += a.groups[c].size();
    EXPECT_EQ(ids.size(), sum);
    EXPECT_EQ(ids.size(), t.age_gender[*spec.fixed[1]][*spec.fixed[2]]);
    EXPECT_TRUE(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
  }
  for (const auto& [spec, ids] : union_groups(a, {Variable::race, Variable::age})) {
    EXPECT_EQ(ids.size(), t.race_age[*spec.fixed[0]][*spec.fixed[1]]);
  }
  EXPECT_EQ(all_union_specs(s).size(), 7u + 9 + 2 + 63 + 14 + 18);
}

TEST(UnionGroups, RejectsZeroOrThreeFixedVariables) {
  const auto a = build_groups(random_manifest(100, 1));
  EXPECT_THROW(union_groups(a, UnionSpec{}), Error);
  EXPECT_THROW(union_groups(a, make_union(a.schema, {{"race", "White"}, {"age", "0-2"}, {"gender", "Male"}})), Error);
  EXPECT_THROW(union_groups(a, std::vector<Variable>{}), Error);
}

TEST(Schema, SmallerSchemaGeneralizes) {
  Schema s;
  s.vocabularies[0] = {"a", "b"};
  s.vocabularies[1] = {"young", "old"};
  s.vocabularies[2] = {"f", "m", "x"};
  const auto a = build_groups(manifest_with_sizes(std::vector<std::size_t>(12, 1), s));
  EXPECT_EQ(a.group_count(), 12u);
  EXPECT_EQ(frequency_table(a).total, 12u);
}

}  // namespace
}  // namespace napkit
