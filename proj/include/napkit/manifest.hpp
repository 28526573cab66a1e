#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "napkit/csv.hpp"
#include "napkit/error.hpp"

namespace napkit {

inline constexpr std::size_t variable_count = 3;
inline constexpr std::array<const char*, variable_count> variable_names = {"race", "age", "gender"};

enum class Variable : std::size_t { race = 0, age = 1, gender = 2 };

inline Variable parse_variable(const std::string& name) {
  for (std::size_t v = 0; v < variable_count; ++v) {
    if (name == variable_names[v]) return static_cast<Variable>(v);
  }
  throw Error(ErrorKind::argument, "unknown sensitive variable '" + name + "'");
}

/// Ordered category vocabularies for race, age and gender.
struct Schema {
  std::array<std::vector<std::string>, variable_count> vocabularies;

  const std::vector<std::string>& vocabulary(Variable v) const { return vocabularies[static_cast<std::size_t>(v)]; }
  std::size_t size(Variable v) const { return vocabulary(v).size(); }

  std::size_t group_count() const { return vocabularies[0].size() * vocabularies[1].size() * vocabularies[2].size(); }

  // Index of `label` in the vocabulary of `v`, or -1.
  std::ptrdiff_t find(Variable v, const std::string& label) const {
    const auto& voc = vocabulary(v);
    const auto it = std::find(voc.begin(), voc.end(), label);
    return it == voc.end() ? -1 : it - voc.begin();
  }

  friend bool operator==(const Schema&, const Schema&) = default;
};

inline nlohmann::json schema_to_json(const Schema& s) {
  nlohmann::json vars = nlohmann::json::array();
  for (std::size_t v = 0; v < variable_count; ++v) {
    vars.push_back({{"name", variable_names[v]}, {"categories", s.vocabularies[v]}});
  }
  return {{"variables", vars}};
}

inline Schema schema_from_json(const nlohmann::json& j) {
  if (!j.contains("variables") || !j["variables"].is_array() || j["variables"].size() != variable_count) {
    throw Error(ErrorKind::schema, "schema must list exactly the variables race, age, gender");
  }
  Schema s;
  for (std::size_t v = 0; v < variable_count; ++v) {
    const auto& var = j["variables"][v];
    if (var.value("name", "") != variable_names[v]) {
      throw Error(ErrorKind::schema,
                  std::string("schema variable ") + std::to_string(v) + " must be '" + variable_names[v] + "'");
    }
    s.vocabularies[v] = var.at("categories").get<std::vector<std::string>>();
    if (s.vocabularies[v].empty()) {
      throw Error(ErrorKind::schema, std::string("empty vocabulary for ") + variable_names[v]);
    }
    auto sorted = s.vocabularies[v];
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw Error(ErrorKind::schema, std::string("duplicate category in ") + variable_names[v]);
    }
  }
  return s;
}

inline Schema read_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  try {
    return schema_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema, path.string() + ": " + e.what());
  }
}

struct ExampleRecord {
  std::size_t example_id = 0;
  std::string image_path;
  std::array<std::size_t, variable_count> labels{};  // indices into the schema vocabularies
};

struct Manifest {
  Schema schema;
  std::vector<ExampleRecord> examples;

  std::size_t size() const { return examples.size(); }
  std::string label(const ExampleRecord& r, Variable v) const {
    return schema.vocabulary(v)[r.labels[static_cast<std::size_t>(v)]];
  }
};

inline std::vector<std::string> manifest_header() { return {"example_id", "image_path", "race", "age", "gender"}; }

/// Parses and validates the manifest CSV against `schema`.
inline Manifest parse_manifest(std::istream& in, const Schema& schema, const std::string& origin = "manifest") {
  Manifest m;
  m.schema = schema;
  std::vector<std::string> fields;
  if (!csv::read_record(in, fields) || fields != manifest_header()) {
    throw Error(ErrorKind::schema, origin + ": header must be example_id,image_path,race,age,gender");
  }
  std::size_t row = 1;
  while (csv::read_record(in, fields)) {
    ++row;
    if (fields.size() == 1 && fields[0].empty()) continue;
    if (fields.size() != 5) {
      throw Error(ErrorKind::schema, origin + ": row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                                         " fields, expected 5");
    }
    ExampleRecord r;
    const auto& id = fields[0];
    const auto res = std::from_chars(id.data(), id.data() + id.size(), r.example_id);
    if (res.ec != std::errc() || res.ptr != id.data() + id.size()) {
      throw Error(ErrorKind::schema, origin + ": row " + std::to_string(row) + ": bad example_id '" + id + "'");
    }
    if (r.example_id != m.examples.size()) {
      throw Error(ErrorKind::schema, origin + ": row " + std::to_string(row) + ": example_id " + id +
                                         " breaks the contiguous 0-based sequence");
    }
    r.image_path = fields[1];
    for (std::size_t v = 0; v < variable_count; ++v) {
      const auto idx = schema.find(static_cast<Variable>(v), fields[2 + v]);
      if (idx < 0) {
        throw Error(ErrorKind::schema, origin + ": row " + std::to_string(row) + " (example_id " + id +
                                           "): " + variable_names[v] + " label '" + fields[2 + v] +
                                           "' is not in the schema vocabulary");
      }
      r.labels[v] = static_cast<std::size_t>(idx);
    }
    m.examples.push_back(std::move(r));
  }
  return m;
}

inline Manifest read_manifest(const std::filesystem::path& csv_path, const Schema& schema) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + csv_path.string());
  return parse_manifest(in, schema, csv_path.string());
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& csv_path) {
  csv::Writer w(manifest_header());
  for (const auto& r : m.examples) {
    w.row({std::to_string(r.example_id), r.image_path, m.label(r, Variable::race), m.label(r, Variable::age),
           m.label(r, Variable::gender)});
  }
  w.save(csv_path);
}

}  // namespace napkit
