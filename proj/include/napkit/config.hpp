#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "napkit/downsample.hpp"
#include "napkit/error.hpp"
#include "napkit/layout.hpp"
#include "napkit/probe.hpp"

namespace napkit {

struct LayoutConfig {
  std::size_t iterations = default_relax_iterations;
  double step = default_relax_step;
  ProjectionMethod projection = ProjectionMethod::pca;
  std::optional<std::uint64_t> seed;  // derived from the master seed when unset
};

struct RenderConfig {
  std::size_t resolution = 100;
  double percentile = 99.5;
};

struct ErrorsConfig {
  Split split = Split::train;
  std::size_t top_k = 10;
};

/// Everything a pipeline run depends on. Loaded from a JSON file whose text is
/// kept verbatim for the report.
struct RunConfig {
  std::filesystem::path dataset_root;
  std::vector<std::string> layers;  // names or ids; empty selects every layer
  std::size_t cap = 640;
  bool nap_unions = true;
  ProbeSampling sampling;
  ProbeConfig probe;
  LayoutConfig layout;
  RenderConfig render;
  ErrorsConfig errors;
  std::uint64_t seed = 0;
  std::string source_text;
};

namespace detail {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::argument, "config: " + what);
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  using detail::require;
  require(c.cap > 0, "cap must be positive");
  require(c.sampling.max_per_group > 0, "probe.max_per_group must be positive");
  require(c.sampling.max_hw > 0, "probe.max_hw must be positive");
  require(c.sampling.val_fraction >= 0.0 && c.sampling.val_fraction < 1.0, "probe.val_fraction must be in [0, 1)");
  require(c.probe.batch_size > 0, "probe.batch_size must be positive");
  require(c.probe.dropout >= 0.0 && c.probe.dropout < 1.0, "probe.dropout must be in [0, 1)");
  require(c.probe.l1 >= 0.0 && c.probe.l2 >= 0.0, "probe.l1 and probe.l2 must be non-negative");
  require(c.probe.learning_rate > 0.0, "probe.learning_rate must be positive");
  require(c.layout.step > 0.0, "layout.step must be positive");
  require(c.render.resolution > 0, "render.resolution must be positive");
  require(c.render.percentile > 50.0 && c.render.percentile <= 100.0, "render.percentile must be in (50, 100]");
  require(c.errors.top_k > 0, "errors.top_k must be positive");
}

inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::argument, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  c.source_text = text;
  try {
    if (j.contains("dataset_root")) {
      std::filesystem::path root = j.at("dataset_root").get<std::string>();
      c.dataset_root = root.is_relative() && !base_dir.empty() ? base_dir / root : root;
    }
    if (j.contains("layers")) {
      for (const auto& l : j.at("layers"))
        c.layers.push_back(l.is_number() ? std::to_string(l.get<std::size_t>()) : l.get<std::string>());
    }
    detail::read_opt(j, "cap", c.cap);
    detail::read_opt(j, "seed", c.seed);
    if (j.contains("nap")) detail::read_opt(j.at("nap"), "unions", c.nap_unions);
    if (j.contains("probe")) {
      const auto& p = j.at("probe");
      detail::read_opt(p, "max_per_group", c.sampling.max_per_group);
      detail::read_opt(p, "val_fraction", c.sampling.val_fraction);
      detail::read_opt(p, "max_hw", c.sampling.max_hw);
      if (p.contains("downsample")) c.sampling.method = parse_downsample_method(p.at("downsample").get<std::string>());
      detail::read_opt(p, "epochs", c.probe.epochs);
      detail::read_opt(p, "batch_size", c.probe.batch_size);
      detail::read_opt(p, "dropout", c.probe.dropout);
      detail::read_opt(p, "l1", c.probe.l1);
      detail::read_opt(p, "l2", c.probe.l2);
      detail::read_opt(p, "learning_rate", c.probe.learning_rate);
    }
    if (j.contains("layout")) {
      const auto& l = j.at("layout");
      detail::read_opt(l, "iterations", c.layout.iterations);
      detail::read_opt(l, "step", c.layout.step);
      if (l.contains("projection"))
        c.layout.projection = parse_projection_method(l.at("projection").get<std::string>());
      if (l.contains("seed")) c.layout.seed = l.at("seed").get<std::uint64_t>();
    }
    if (j.contains("render")) {
      detail::read_opt(j.at("render"), "resolution", c.render.resolution);
      detail::read_opt(j.at("render"), "percentile", c.render.percentile);
    }
    if (j.contains("errors")) {
      const auto& e = j.at("errors");
      if (e.contains("split")) {
        const auto s = e.at("split").get<std::string>();
        if (s != "train" && s != "val") throw Error(ErrorKind::argument, "config: errors.split must be train or val");
        c.errors.split = s == "train" ? Split::train : Split::val;
      }
      detail::read_opt(e, "top_k", c.errors.top_k);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::argument, std::string("config: ") + e.what());
  }
  validate(c);
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

// Canonical JSON of the resolved settings, used for stage fingerprints.
inline nlohmann::json to_json(const RunConfig& c) {
  return {{"dataset_root", c.dataset_root.string()},
          {"layers", c.layers},
          {"cap", c.cap},
          {"seed", c.seed},
          {"nap", {{"unions", c.nap_unions}}},
          {"probe",
           {{"max_per_group", c.sampling.max_per_group},
            {"val_fraction", c.sampling.val_fraction},
            {"max_hw", c.sampling.max_hw},
            {"downsample", std::string(to_string(c.sampling.method))},
            {"epochs", c.probe.epochs},
            {"batch_size", c.probe.batch_size},
            {"dropout", c.probe.dropout},
            {"l1", c.probe.l1},
            {"l2", c.probe.l2},
            {"learning_rate", c.probe.learning_rate}}},
          {"layout",
           {{"iterations", c.layout.iterations},
            {"step", c.layout.step},
            {"projection", to_string(c.layout.projection)},
            {"seed", c.layout.seed ? nlohmann::json(*c.layout.seed) : nlohmann::json(nullptr)}}},
          {"render", {{"resolution", c.render.resolution}, {"percentile", c.render.percentile}}},
          {"errors", {{"split", to_string(c.errors.split)}, {"top_k", c.errors.top_k}}}};
}

}  // namespace napkit
