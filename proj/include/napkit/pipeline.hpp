#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <zlib.h>
#include <nlohmann/json.hpp>

#include "napkit/config.hpp"
#include "napkit/dataset.hpp"
#include "napkit/error.hpp"
#include "napkit/groups.hpp"
#include "napkit/image.hpp"
#include "napkit/layout.hpp"
#include "napkit/nap.hpp"
#include "napkit/probe.hpp"
#include "napkit/rng.hpp"
#include "napkit/topomap.hpp"
#include "napkit/version.hpp"

namespace napkit {

namespace fs = std::filesystem;

struct RunOptions {
  RunConfig config;
  fs::path out;
  std::size_t jobs = 1;
  bool force = false;
  std::ostream* log = &std::cerr;
};

enum class StageStatus { ran, up_to_date };

namespace detail {

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot open " + p.string() + " for writing");
  out << text;
  if (!out) throw Error(ErrorKind::io, "write failed for " + p.string());
}

inline std::string hex(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

inline std::uint32_t file_crc32(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + p.string());
  std::vector<char> buf(1 << 16);
  uLong crc = crc32(0L, Z_NULL, 0);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(in.gcount()));
  }
  return static_cast<std::uint32_t>(crc);
}

inline nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_text(p));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, p.string() + ": " + e.what());
  }
}

inline std::string stage_fingerprint(const std::string& stage, const nlohmann::json& settings,
                                     const std::vector<std::string>& upstream) {
  std::string text = stage + "\n" + settings.dump() + "\n";
  for (const auto& u : upstream) text += u + "\n";
  return hex(fnv1a64(text));
}

}  // namespace detail

inline fs::path stage_dir(const RunOptions& o, const std::string& stage) { return o.out / stage; }

inline std::string stage_stamp(const RunOptions& o, const std::string& stage) {
  const auto p = stage_dir(o, stage) / "stage.json";
  if (!fs::exists(p)) return {};
  return detail::read_json(p).value("fingerprint", "");
}

inline void require_stage(const RunOptions& o, const std::string& stage, const std::string& needed_by) {
  if (stage_stamp(o, stage).empty()) {
    throw Error(ErrorKind::prerequisite, "'" + needed_by + "' needs the '" + stage + "' stage; run `napkit " + stage +
                                             " --config <file> --out " + o.out.string() + "` first");
  }
}

/// Skips `body` when the stage stamp matches `fingerprint` (unless forced) and
/// stamps the stage after a successful run.
inline StageStatus run_stage(const RunOptions& o, const std::string& stage, const std::string& fingerprint,
                             const std::function<void(const fs::path&)>& body) {
  const fs::path dir = stage_dir(o, stage);
  if (!o.force && stage_stamp(o, stage) == fingerprint) {
    *o.log << stage << ": up to date\n";
    return StageStatus::up_to_date;
  }
  // Start from an empty directory so artifacts of an earlier configuration do not linger.
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto t0 = std::chrono::steady_clock::now();
  body(dir);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const nlohmann::json stamp = {{"stage", stage}, {"fingerprint", fingerprint}, {"seconds", seconds}};
  detail::write_text(dir / "stage.json", stamp.dump(2) + "\n");
  *o.log << stage << ": done in " << seconds << " s\n";
  return StageStatus::ran;
}

inline ActivationDataset<float> open_run_dataset(const RunOptions& o) {
  if (o.config.dataset_root.empty()) throw Error(ErrorKind::argument, "config has no dataset_root");
  return ActivationDataset<float>::open(o.config.dataset_root);
}

inline std::vector<LayerSpec> selected_layers(const ActivationDataset<float>& ds, const RunConfig& c) {
  if (c.layers.empty()) return ds.layers();
  std::vector<LayerSpec> out;
  for (const auto& key : c.layers) out.push_back(ds.layer(key));
  return out;
}

inline GroupAssignment capped_assignment(const ActivationDataset<float>& ds, const RunConfig& c) {
  return cap_groups(build_groups(ds.manifest()), c.cap, derive_seed(c.seed, "cap"));
}

/// Validates the dataset (labels, shapes, finite values) and writes a lockfile with checksums.
inline StageStatus cmd_ingest(const RunOptions& o) {
  const auto ds = open_run_dataset(o);
  nlohmann::json files = nlohmann::json::object();
  files["manifest.csv"] = detail::file_crc32(ds.root() / "manifest.csv");
  files["schema.json"] = detail::file_crc32(ds.root() / "schema.json");
  for (const auto& l : ds.layers()) files["layers/" + l.dir_name() + ".npy"] = detail::file_crc32(ds.layer_file(l));
  const std::string fp =
      detail::stage_fingerprint("ingest", {{"root", fs::absolute(ds.root()).string()}, {"files", files}}, {});
  return run_stage(o, "ingest", fp, [&](const fs::path& dir) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : ds.layers()) {
      NpyReader<float> reader(ds.layer_file(l));
      std::vector<float> row(reader.row_size());
      for (std::size_t i = 0; i < reader.rows(); ++i) reader.read_rows(i, 1, row);
      layers.push_back({{"layer_id", l.layer_id}, {"name", l.name}, {"shape", l.shape}});
    }
    const nlohmann::json lock = {{"dataset_root", fs::absolute(ds.root()).string()},
                                 {"examples", ds.example_count()},
                                 {"schema", schema_to_json(ds.manifest().schema)},
                                 {"layers", layers},
                                 {"crc32", files}};
    detail::write_text(dir / "dataset.lock.json", lock.dump(2) + "\n");
  });
}

inline StageStatus cmd_nap(const RunOptions& o) {
  require_stage(o, "ingest", "nap");
  const auto ds = open_run_dataset(o);
  const auto& c = o.config;
  const std::string fp = detail::stage_fingerprint(
      "nap", {{"layers", c.layers}, {"cap", c.cap}, {"seed", c.seed}, {"unions", c.nap_unions}},
      {stage_stamp(o, "ingest")});
  return run_stage(o, "nap", fp, [&](const fs::path& dir) {
    const Schema& schema = ds.manifest().schema;
    const auto full = build_groups(ds.manifest());
    const auto capped = cap_groups(full, c.cap, derive_seed(c.seed, "cap"));
    frequency_csv(frequency_table(full)).save(dir / "frequency_full.csv");
    frequency_csv(frequency_table(capped)).save(dir / "frequency_capped.csv");
    const auto unions = c.nap_unions ? all_union_specs(schema) : std::vector<UnionSpec>{};
    std::ostringstream log;
    for (const auto& layer : selected_layers(ds, c)) {
      const auto set = compute_nap_set(ds, layer, capped, unions, o.jobs);
      save_nap_set(set, schema, nap_dir(dir, layer));
      log << layer.dir_name() << ": " << set.naps.size() << " groups, " << set.empty_groups.size() << " empty\n";
      for (auto e : set.empty_groups) log << "  empty group: " << group_label(group_key(e, schema), schema) << "\n";
    }
    detail::write_text(dir / "run.log", log.str());
  });
}

inline StageStatus cmd_layout(const RunOptions& o) {
  require_stage(o, "nap", "layout");
  const auto ds = open_run_dataset(o);
  const auto& c = o.config;
  const std::uint64_t seed = c.layout.seed.value_or(derive_seed(c.seed, "layout"));
  const std::string fp = detail::stage_fingerprint(
      "layout", {{"layers", c.layers}, {"config", to_json(c)["layout"]}, {"seed", seed}}, {stage_stamp(o, "nap")});
  return run_stage(o, "layout", fp, [&](const fs::path& dir) {
    for (const auto& layer : selected_layers(ds, c)) {
      const auto set = load_nap_set<float>(ds.manifest().schema, nap_dir(stage_dir(o, "nap"), layer));
      auto initial = initial_projection(channel_features(set), c.layout.projection, seed);
      const auto relaxed = relax(initial, c.layout.iterations, c.layout.step, o.jobs);
      save_layout(relaxed, {seed, c.layout.iterations, c.layout.step, c.layout.projection},
                  dir / (layer.dir_name() + ".csv"), dir / (layer.dir_name() + ".json"));
    }
  });
}

inline std::vector<double> profile_values(const std::vector<float>& profile) {
  return std::vector<double>(profile.begin(), profile.end());
}

inline StageStatus cmd_render(const RunOptions& o) {
  require_stage(o, "nap", "render");
  require_stage(o, "layout", "render");
  const auto ds = open_run_dataset(o);
  const auto& c = o.config;
  const std::string fp = detail::stage_fingerprint("render", {{"layers", c.layers}, {"config", to_json(c)["render"]}},
                                                   {stage_stamp(o, "nap"), stage_stamp(o, "layout")});
  return run_stage(o, "render", fp, [&](const fs::path& dir) {
    const Schema& schema = ds.manifest().schema;
    for (const auto& layer : selected_layers(ds, c)) {
      const auto set = load_nap_set<float>(schema, nap_dir(stage_dir(o, "nap"), layer));
      const auto layout = load_layout(stage_dir(o, "layout") / (layer.dir_name() + ".csv"));
      if (layout.coords.size() != layer.channels()) {
        throw Error(ErrorKind::shape, "layout for " + layer.dir_name() + " has " +
                                          std::to_string(layout.coords.size()) + " particles, layer has " +
                                          std::to_string(layer.channels()) + " channels");
      }
      std::vector<double> pooled;
      for (const auto& nap : set.naps)
        pooled.insert(pooled.end(), nap.channel_profile.begin(), nap.channel_profile.end());
      if (pooled.empty()) throw Error(ErrorKind::empty_group, "layer " + layer.dir_name() + " has no NAPs to render");
      const ColorScale scale = build_color_scale(pooled, c.render.percentile);
      const fs::path ldir = dir / layer.dir_name();
      fs::create_directories(ldir / "unions");
      std::vector<std::pair<GroupKey, RgbImage>> rendered(set.naps.size());
      parallel_for(set.naps.size(), o.jobs, [&](std::size_t i) {
        const auto grid = rasterize(layout, profile_values(set.naps[i].channel_profile), c.render.resolution);
        rendered[i] = {group_key(set.class_ids[i], schema), render_group(grid, scale)};
      });
      std::map<GroupKey, RgbImage> maps;
      for (auto& [key, img] : rendered) {
        write_png(img, ldir / (group_slug(key, schema) + ".png"));
        maps.emplace(key, std::move(img));
      }
      for (const auto& u : set.unions) {
        const auto grid = rasterize(layout, profile_values(u.nap.channel_profile), c.render.resolution);
        write_png(render_group(grid, scale), ldir / "unions" / (union_slug(u.spec, schema) + ".png"));
      }
      write_png(render_grid(maps, schema, layer.name), ldir / "composite.png");
      const nlohmann::json meta = {{"vmax", scale.vmax()},
                                   {"percentile", scale.percentile()},
                                   {"resolution", c.render.resolution},
                                   {"groups", set.naps.size()}};
      detail::write_text(ldir / "scale.json", meta.dump(2) + "\n");
    }
  });
}

inline csv::Writer split_csv(const ProbeDataset& pd) {
  csv::Writer w({"example_id", "label", "split"});
  for (std::size_t i = 0; i < pd.size(); ++i) {
    w.row({std::to_string(pd.example_ids[i]), std::to_string(pd.labels[i]), to_string(pd.split[i])});
  }
  return w;
}

/// Rebuilds the probe rows recorded by `split_csv`.
template <ActivationSource Source>
ProbeDataset load_probe_rows(const Source& source, const LayerSpec& layer, std::size_t num_classes,
                             const ProbeSampling& sampling, const fs::path& split_file) {
  std::ifstream in(split_file, std::ios::binary);
  if (!in) throw Error(ErrorKind::prerequisite, "missing probe split file " + split_file.string());
  std::vector<std::string> f;
  csv::read_record(in, f);
  ProbeDataset pd;
  pd.layer_id = layer.layer_id;
  pd.method = sampling.method;
  pd.num_classes = num_classes;
  while (csv::read_record(in, f)) {
    if (f.size() != 3) continue;
    pd.example_ids.push_back(std::stoull(f[0]));
    pd.labels.push_back(std::stoull(f[1]));
    pd.split.push_back(f[2] == "val" ? Split::val : Split::train);
  }
  using T = typename Source::value_type;
  const std::size_t D = probe_feature_dim(layer, sampling.max_hw);
  pd.features.resize(static_cast<Eigen::Index>(pd.size()), static_cast<Eigen::Index>(D));
  auto cursor = source.cursor(layer);
  std::vector<T> raw(layer.example_size()), reduced(D);
  for (std::size_t r = 0; r < pd.size(); ++r) {
    cursor.read(pd.example_ids[r], std::span<T>(raw));
    if (layer.is_spatial()) {
      downsample_example<T>(raw, {layer.shape[0], layer.shape[1], layer.shape[2]}, sampling.method, sampling.max_hw,
                            std::span<T>(reduced));
    } else {
      reduced = raw;
    }
    for (std::size_t d = 0; d < D; ++d) {
      pd.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(d)) = static_cast<float>(reduced[d]);
    }
  }
  return pd;
}

inline StageStatus cmd_probe(const RunOptions& o) {
  require_stage(o, "ingest", "probe");
  const auto ds = open_run_dataset(o);
  const auto& c = o.config;
  const std::string fp = detail::stage_fingerprint(
      "probe", {{"layers", c.layers}, {"cap", c.cap}, {"seed", c.seed}, {"config", to_json(c)["probe"]}},
      {stage_stamp(o, "ingest")});
  return run_stage(o, "probe", fp, [&](const fs::path& dir) {
    const auto layers = selected_layers(ds, c);
    const auto sweep =
        layer_sweep(ds, layers, capped_assignment(ds, c), c.sampling, c.probe, derive_seed(c.seed, "probe"), o.jobs);
    fs::create_directories(dir / "curves");
    fs::create_directories(dir / "models");
    csv::Writer table({"layer_id", "layer_name", "train_acc", "val_acc"});
    std::vector<std::string> names;
    std::vector<double> train, val;
    for (const auto& e : sweep) {
      const std::string name = e.layer.dir_name();
      table.row({std::to_string(e.layer.layer_id), e.layer.name, format_fixed(e.train_acc, 6),
                 std::isnan(e.val_acc) ? std::string() : format_fixed(e.val_acc, 6)});
      curves_csv(e.curves).save(dir / "curves" / (name + ".csv"));
      std::vector<std::string> epochs;
      for (std::size_t k = 0; k < e.curves.train_acc.size(); ++k) epochs.push_back(std::to_string(k + 1));
      write_png(
          line_chart("learning curves: " + e.layer.name, epochs,
                     {{"train", e.curves.train_acc, {31, 119, 180}}, {"validation", e.curves.val_acc, {255, 127, 14}}}),
          dir / "curves" / (name + ".png"));
      save_probe_model(e.model, dir / "models" / (name + "_W.npy"), dir / "models" / (name + "_b.npy"));
      split_csv(e.data).save(dir / "models" / (name + "_split.csv"));
      names.push_back(e.layer.name);
      train.push_back(e.train_acc);
      val.push_back(e.val_acc);
    }
    table.save(dir / "sweep.csv");
    write_png(line_chart("probe accuracy by layer", names,
                         {{"train", train, {31, 119, 180}}, {"validation", val, {255, 127, 14}}}),
              dir / "accuracy.png");
  });
}

inline StageStatus cmd_errors(const RunOptions& o) {
  require_stage(o, "probe", "errors");
  const auto ds = open_run_dataset(o);
  const auto& c = o.config;
  const std::string fp = detail::stage_fingerprint("errors", {{"layers", c.layers}, {"config", to_json(c)["errors"]}},
                                                   {stage_stamp(o, "probe")});
  return run_stage(o, "errors", fp, [&](const fs::path& dir) {
    const Schema& schema = ds.manifest().schema;
    const fs::path models = stage_dir(o, "probe") / "models";
    for (const auto& layer : selected_layers(ds, c)) {
      const std::string name = layer.dir_name();
      const auto model = load_probe_model(models / (name + "_W.npy"), models / (name + "_b.npy"));
      const auto pd = load_probe_rows(ds, layer, schema.group_count(), c.sampling, models / (name + "_split.csv"));
      if (pd.dim() != model.dim())
        throw Error(ErrorKind::shape, "probe model for " + name + " does not match its features");
      const auto rows = pd.indices(c.errors.split);
      const auto records =
          rows.empty() ? std::vector<ErrorRecord>{} : error_table(model, pd, schema, c.errors.split, c.errors.top_k);
      error_table_csv(records, schema).save(dir / (name + ".csv"));
    }
  });
}

/// Collates every finished stage into `report/report.json` and `report/summary.txt`.
inline StageStatus cmd_report(const RunOptions& o) {
  require_stage(o, "ingest", "report");
  const auto ds = open_run_dataset(o);
  const auto& c = o.config;
  std::vector<std::string> upstream;
  for (const char* stage : {"ingest", "nap", "layout", "render", "probe", "errors"})
    upstream.push_back(stage_stamp(o, stage));
  const std::string fp =
      detail::stage_fingerprint("report", {{"config", c.source_text}, {"layers", c.layers}}, upstream);
  return run_stage(o, "report", fp, [&](const fs::path& dir) {
    const Schema& schema = ds.manifest().schema;
    nlohmann::json report;
    report["software"] = {{"name", "napkit"}, {"version", version}};
    report["config"] = c.source_text;
    report["resolved_config"] = to_json(c);
    const auto capped = capped_assignment(ds, c);
    nlohmann::json groups = nlohmann::json::array();
    for (std::size_t k = 0; k < capped.group_count(); ++k) {
      groups.push_back({{"label", group_label(group_key(k, schema), schema)}, {"count", capped.groups[k].size()}});
    }
    report["groups"] = groups;
    report["examples"] = {{"total", ds.example_count()}, {"capped", capped.total()}};
    nlohmann::json timings = nlohmann::json::object();
    std::vector<fs::path> referenced;
    for (const char* stage : {"ingest", "nap", "layout", "render", "probe", "errors"}) {
      const auto p = stage_dir(o, stage) / "stage.json";
      if (fs::exists(p)) timings[stage] = detail::read_json(p).value("seconds", 0.0);
    }
    report["timings_s"] = timings;
    auto rel = [&](const fs::path& p) {
      referenced.push_back(p);
      return fs::relative(p, o.out).generic_string();
    };
    nlohmann::json layers = nlohmann::json::array();
    std::map<std::string, std::pair<std::string, std::string>> acc;
    if (!stage_stamp(o, "probe").empty()) {
      std::ifstream in(stage_dir(o, "probe") / "sweep.csv");
      std::vector<std::string> f;
      csv::read_record(in, f);
      while (csv::read_record(in, f)) {
        if (f.size() == 4) acc[f[0]] = {f[2], f[3]};
      }
    }
    for (const auto& layer : selected_layers(ds, c)) {
      nlohmann::json l = {{"layer_id", layer.layer_id}, {"name", layer.name}, {"shape", layer.shape}};
      const std::string name = layer.dir_name();
      if (auto it = acc.find(std::to_string(layer.layer_id)); it != acc.end()) {
        l["train_acc"] = std::stod(it->second.first);
        l["val_acc"] =
            it->second.second.empty() ? nlohmann::json(nullptr) : nlohmann::json(std::stod(it->second.second));
        l["learning_curves"] = rel(stage_dir(o, "probe") / "curves" / (name + ".csv"));
      }
      if (!stage_stamp(o, "errors").empty()) l["error_table"] = rel(stage_dir(o, "errors") / (name + ".csv"));
      if (!stage_stamp(o, "nap").empty()) l["nap_index"] = rel(nap_dir(stage_dir(o, "nap"), layer) / "index.json");
      if (!stage_stamp(o, "layout").empty()) l["layout"] = rel(stage_dir(o, "layout") / (name + ".csv"));
      if (!stage_stamp(o, "render").empty()) {
        l["composite"] = rel(stage_dir(o, "render") / name / "composite.png");
        l["topomaps"] = rel(stage_dir(o, "render") / name);
      }
      layers.push_back(l);
    }
    report["layers"] = layers;
    if (!stage_stamp(o, "probe").empty()) report["sweep"] = rel(stage_dir(o, "probe") / "sweep.csv");
    for (const auto& p : referenced) {
      if (!fs::exists(p)) throw Error(ErrorKind::prerequisite, "report references missing artifact " + p.string());
    }
    detail::write_text(dir / "report.json", report.dump(2) + "\n");

    std::ostringstream s;
    s << "napkit " << version << " report\n";
    s << "dataset: " << c.dataset_root.string() << " (" << ds.example_count() << " examples, " << capped.total()
      << " after capping at " << c.cap << ")\n";
    s << "groups: " << capped.group_count() << " (" << capped.non_empty() << " non-empty)\n\n";
    s << "layer                          train_acc  val_acc\n";
    for (const auto& l : layers) {
      std::string name = l["name"].get<std::string>();
      name.resize(30, ' ');
      s << name << " ";
      if (l.contains("train_acc")) {
        s << format_fixed(l["train_acc"].get<double>(), 4) << "     "
          << (l["val_acc"].is_null() ? std::string("-") : format_fixed(l["val_acc"].get<double>(), 4));
      } else {
        s << "-          -";
      }
      s << "\n";
    }
    detail::write_text(dir / "summary.txt", s.str());
  });
}

}  // namespace napkit
