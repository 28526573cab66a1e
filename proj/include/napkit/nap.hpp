#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "napkit/dataset.hpp"
#include "napkit/error.hpp"
#include "napkit/groups.hpp"
#include "napkit/npy.hpp"
#include "napkit/parallel.hpp"
#include "napkit/tensor.hpp"

namespace napkit {

/// Mean activation of a group in one layer.
template <typename Real>
struct GroupMean {
  std::string key;
  std::size_t layer_id = 0;
  BasicTensor<Real> mean;
  std::size_t count = 0;
};

template <typename Real>
struct ExpectedActivation {
  std::size_t layer_id = 0;
  BasicTensor<Real> expectation;
  std::size_t total_count = 0;
};

/// Neuron Activation Profile: group mean minus the expected activation.
template <typename Real>
struct Nap {
  std::string key;
  std::size_t layer_id = 0;
  std::size_t count = 0;
  BasicTensor<Real> values;
  std::vector<Real> channel_profile;  // spatial mean per channel; `values` itself for flat layers
};

template <typename Real>
struct UnionNap {
  UnionSpec spec;
  Nap<Real> nap;
};

template <typename Real>
struct NapSet {
  std::size_t layer_id = 0;
  LayerSpec layer;
  std::vector<std::size_t> class_ids;  // class id of each entry in `naps`
  std::vector<Nap<Real>> naps;         // non-empty intersectional groups, class order
  std::vector<std::size_t> empty_groups;
  std::vector<UnionNap<Real>> unions;
  ExpectedActivation<Real> expectation;

  const Nap<Real>* find(std::size_t class_id) const {
    const auto it = std::find(class_ids.begin(), class_ids.end(), class_id);
    return it == class_ids.end() ? nullptr : &naps[static_cast<std::size_t>(it - class_ids.begin())];
  }
};

/// Streaming mean over `ids`, accumulated in double with a running-mean update.
template <ActivationSource Source>
GroupMean<typename Source::value_type> group_mean(const Source& source, const LayerSpec& layer,
                                                  std::span<const std::size_t> ids, std::string key = {}) {
  using Real = typename Source::value_type;
  if (ids.empty()) throw Error(ErrorKind::empty_group, "group '" + key + "' has no examples");
  const std::size_t n = layer.example_size();
  std::vector<double> mean(n, 0.0);
  std::vector<Real> row(n);
  auto cursor = source.cursor(layer);
  std::size_t k = 0;
  for (std::size_t id : ids) {
    if (id >= source.example_count()) {
      throw Error(ErrorKind::index, "example_id " + std::to_string(id) + " out of range (" +
                                        std::to_string(source.example_count()) + " examples)");
    }
    cursor.read(id, std::span<Real>(row));
    ++k;
    const double inv = 1.0 / static_cast<double>(k);
    for (std::size_t i = 0; i < n; ++i) mean[i] += (static_cast<double>(row[i]) - mean[i]) * inv;
  }
  GroupMean<Real> out;
  out.key = std::move(key);
  out.layer_id = layer.layer_id;
  out.count = k;
  out.mean = BasicTensor<Real>(layer.shape, std::vector<Real>(mean.begin(), mean.end()));
  return out;
}

template <typename Real>
ExpectedActivation<Real> expected_activation(std::span<const GroupMean<Real>> means) {
  std::vector<double> acc;
  std::size_t total = 0;
  const GroupMean<Real>* first = nullptr;
  for (const auto& m : means) {
    if (m.count == 0) continue;
    if (!first) {
      first = &m;
      acc.assign(m.mean.size(), 0.0);
    } else if (m.mean.shape() != first->mean.shape()) {
      throw Error(ErrorKind::shape, "group means disagree in shape");
    }
    const double w = static_cast<double>(m.count);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * static_cast<double>(m.mean[i]);
    total += m.count;
  }
  if (!first) throw Error(ErrorKind::empty_group, "expected activation needs at least one non-empty group");
  ExpectedActivation<Real> e;
  e.layer_id = first->layer_id;
  e.total_count = total;
  std::vector<Real> values(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) values[i] = static_cast<Real>(acc[i] / static_cast<double>(total));
  e.expectation = BasicTensor<Real>(first->mean.shape(), std::move(values));
  return e;
}

template <typename Real>
std::vector<Real> channel_profile(const BasicTensor<Real>& values) {
  if (values.rank() != 3) return values.values();
  const std::size_t C = values.shape()[2];
  const std::size_t cells = values.shape()[0] * values.shape()[1];
  std::vector<double> acc(C, 0.0);
  for (std::size_t p = 0; p < cells; ++p) {
    for (std::size_t c = 0; c < C; ++c) acc[c] += static_cast<double>(values[p * C + c]);
  }
  std::vector<Real> out(C);
  for (std::size_t c = 0; c < C; ++c) out[c] = static_cast<Real>(acc[c] / static_cast<double>(cells));
  return out;
}

template <typename Real>
Nap<Real> compute_nap(const GroupMean<Real>& mean, const ExpectedActivation<Real>& exp) {
  if (mean.mean.shape() != exp.expectation.shape()) {
    throw Error(ErrorKind::shape, "group mean shape " + shape_string(mean.mean.shape()) +
                                      " does not match expectation shape " + shape_string(exp.expectation.shape()));
  }
  std::vector<Real> v(mean.mean.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = mean.mean[i] - exp.expectation[i];
  Nap<Real> nap;
  nap.key = mean.key;
  nap.layer_id = mean.layer_id;
  nap.count = mean.count;
  nap.values = BasicTensor<Real>(mean.mean.shape(), std::move(v));
  nap.channel_profile = channel_profile(nap.values);
  return nap;
}

/// NAPs of all non-empty intersectional groups plus the requested unions.
/// Union NAPs subtract the intersectional expectation.
template <ActivationSource Source>
NapSet<typename Source::value_type> compute_nap_set(const Source& source, const LayerSpec& layer,
                                                    const GroupAssignment& assignment,
                                                    const std::vector<UnionSpec>& unions = {}, std::size_t jobs = 1) {
  using Real = typename Source::value_type;
  const Schema& s = assignment.schema;
  NapSet<Real> set;
  set.layer_id = layer.layer_id;
  set.layer = layer;
  for (std::size_t c = 0; c < assignment.groups.size(); ++c) {
    (assignment.groups[c].empty() ? set.empty_groups : set.class_ids).push_back(c);
  }
  std::vector<GroupMean<Real>> means(set.class_ids.size());
  parallel_for(means.size(), jobs, [&](std::size_t i) {
    const std::size_t c = set.class_ids[i];
    means[i] =
        group_mean(source, layer, std::span<const std::size_t>(assignment.groups[c]), group_label(group_key(c, s), s));
  });
  set.expectation = expected_activation(std::span<const GroupMean<Real>>(means));
  set.naps.reserve(means.size());
  for (const auto& m : means) set.naps.push_back(compute_nap(m, set.expectation));

  std::vector<std::vector<std::size_t>> union_ids(unions.size());
  for (std::size_t u = 0; u < unions.size(); ++u) union_ids[u] = union_groups(assignment, unions[u]);
  std::vector<std::optional<UnionNap<Real>>> union_naps(unions.size());
  parallel_for(unions.size(), jobs, [&](std::size_t u) {
    if (union_ids[u].empty()) return;
    const auto m = group_mean(source, layer, std::span<const std::size_t>(union_ids[u]), union_label(unions[u], s));
    union_naps[u] = UnionNap<Real>{unions[u], compute_nap(m, set.expectation)};
  });
  for (auto& u : union_naps) {
    if (u) set.unions.push_back(std::move(*u));
  }
  return set;
}

inline std::filesystem::path nap_dir(const std::filesystem::path& root, const LayerSpec& layer) {
  return root / layer.dir_name();
}

/// Writes `<dir>/<group>.npy`, `<dir>/unions/<union>.npy`, `<dir>/expectation.npy` and `<dir>/index.json`.
template <typename Real>
void save_nap_set(const NapSet<Real>& set, const Schema& schema, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "unions");
  nlohmann::json groups = nlohmann::json::array();
  for (std::size_t i = 0; i < set.naps.size(); ++i) {
    const GroupKey k = group_key(set.class_ids[i], schema);
    const std::string file = group_slug(k, schema) + ".npy";
    write_array_file(set.naps[i].values, dir / file);
    groups.push_back({{"class_id", set.class_ids[i]},
                      {"race", schema.vocabulary(Variable::race)[k.race]},
                      {"age", schema.vocabulary(Variable::age)[k.age]},
                      {"gender", schema.vocabulary(Variable::gender)[k.gender]},
                      {"count", set.naps[i].count},
                      {"file", file}});
  }
  nlohmann::json unions = nlohmann::json::array();
  for (const auto& u : set.unions) {
    const std::string file = "unions/" + union_slug(u.spec, schema) + ".npy";
    write_array_file(u.nap.values, dir / file);
    nlohmann::json fixed = nlohmann::json::object();
    for (std::size_t v = 0; v < variable_count; ++v) {
      if (u.spec.fixed[v]) fixed[variable_names[v]] = schema.vocabularies[v][*u.spec.fixed[v]];
    }
    unions.push_back({{"fixed", fixed}, {"count", u.nap.count}, {"file", file}});
  }
  nlohmann::json empty = nlohmann::json::array();
  for (std::size_t c : set.empty_groups) empty.push_back(group_label(group_key(c, schema), schema));
  write_array_file(set.expectation.expectation, dir / "expectation.npy");
  const nlohmann::json index = {
      {"layer_id", set.layer.layer_id},
      {"layer_name", set.layer.name},
      {"shape", set.layer.shape},
      {"expectation", {{"file", "expectation.npy"}, {"total_count", set.expectation.total_count}}},
      {"groups", groups},
      {"unions", unions},
      {"empty_groups", empty}};
  std::ofstream out(dir / "index.json", std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + (dir / "index.json").string());
  out << index.dump(2) << '\n';
}

template <typename Real = float>
NapSet<Real> load_nap_set(const Schema& schema, const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw Error(ErrorKind::prerequisite, "no NAP index at " + (dir / "index.json").string());
  const auto index = nlohmann::json::parse(in);
  NapSet<Real> set;
  set.layer.layer_id = index.at("layer_id").get<std::size_t>();
  set.layer.name = index.at("layer_name").get<std::string>();
  set.layer.shape = index.at("shape").get<Shape>();
  set.layer_id = set.layer.layer_id;
  set.expectation.layer_id = set.layer_id;
  set.expectation.total_count = index.at("expectation").at("total_count").get<std::size_t>();
  set.expectation.expectation = read_array_file<Real>(dir / index.at("expectation").at("file").get<std::string>());
  for (const auto& g : index.at("groups")) {
    const auto r = schema.find(Variable::race, g.at("race").get<std::string>());
    const auto a = schema.find(Variable::age, g.at("age").get<std::string>());
    const auto gd = schema.find(Variable::gender, g.at("gender").get<std::string>());
    if (r < 0 || a < 0 || gd < 0) throw Error(ErrorKind::schema, "NAP index group outside the schema");
    const GroupKey k{static_cast<std::size_t>(r), static_cast<std::size_t>(a), static_cast<std::size_t>(gd)};
    Nap<Real> nap;
    nap.key = group_label(k, schema);
    nap.layer_id = set.layer_id;
    nap.count = g.at("count").get<std::size_t>();
    nap.values = read_array_file<Real>(dir / g.at("file").get<std::string>());
    nap.channel_profile = channel_profile(nap.values);
    set.class_ids.push_back(class_index(k, schema));
    set.naps.push_back(std::move(nap));
  }
  for (const auto& u : index.at("unions")) {
    std::map<std::string, std::string> fixed;
    for (const auto& [name, cat] : u.at("fixed").items()) fixed[name] = cat.template get<std::string>();
    UnionNap<Real> un;
    un.spec = make_union(schema, fixed);
    un.nap.key = union_label(un.spec, schema);
    un.nap.layer_id = set.layer_id;
    un.nap.count = u.at("count").get<std::size_t>();
    un.nap.values = read_array_file<Real>(dir / u.at("file").get<std::string>());
    un.nap.channel_profile = channel_profile(un.nap.values);
    set.unions.push_back(std::move(un));
  }
  for (std::size_t c = 0; c < schema.group_count(); ++c) {
    if (!set.find(c)) set.empty_groups.push_back(c);
  }
  return set;
}

}  // namespace napkit
