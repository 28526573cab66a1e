// Command-line front end: ingest, nap, layout, render, probe, errors, report.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "napkit/pipeline.hpp"
#include "napkit/synthetic.hpp"
#include "napkit/version.hpp"

namespace {

namespace fs = std::filesystem;

int exit_code(napkit::ErrorKind kind) {
  using napkit::ErrorKind;
  switch (kind) {
    case ErrorKind::prerequisite: return 3;
    case ErrorKind::numeric: return 4;
    case ErrorKind::io: return 1;
    default: return 2;
  }
}

int report_error(napkit::ErrorKind kind, const std::string& message) {
  const int code = exit_code(kind);
  const nlohmann::json err = {
      {"error", {{"kind", napkit::to_string(kind)}, {"message", message}, {"exit_code", code}}}};
  std::cerr << err.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Intersectional bias audit of layer activations: probes, NAPs and topographic maps"};
  app.set_version_flag("--version", napkit::version);
  app.require_subcommand(1);

  fs::path config_path;
  fs::path out = "napkit-out";
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  bool force = false;
  fs::path dataset_override;
  app.add_option("--config", config_path, "Run configuration (JSON)");
  app.add_option("--out", out, "Output directory");
  app.add_option("--seed", seed, "Master seed (overrides the config)");
  app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--force", force, "Re-run stages even when up to date");
  app.add_option("--dataset", dataset_override, "Dataset root (overrides the config)");

  const char* verbs[][2] = {{"ingest", "Validate a dataset and write its lockfile"},
                            {"nap", "Compute Neuron Activation Profiles"},
                            {"layout", "Lay out channels for topographic maps"},
                            {"render", "Render topographic activation maps"},
                            {"probe", "Train linear classifier probes per layer"},
                            {"errors", "Tabulate frequent probe errors"},
                            {"report", "Collate all stage outputs"}};
  for (const auto& v : verbs) app.add_subcommand(v[0], v[1])->fallthrough();

  auto* synth = app.add_subcommand("synth", "Write a synthetic demo dataset");
  fs::path synth_root;
  std::size_t per_group = 20;
  std::size_t signal_layer = 1;
  std::uint64_t synth_seed = 0;
  synth->add_option("root", synth_root, "Dataset directory to create")->required();
  synth->add_option("--per-group", per_group, "Examples per intersectional group");
  synth->add_option("--signal-layer", signal_layer, "Layer (0..3) carrying the planted group signal");
  synth->add_option("--synth-seed", synth_seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) {
      napkit::SyntheticOptions opt;
      opt.per_group = per_group;
      opt.seed = synth_seed;
      opt.layers = {{"input", {16, 16, 3}, 0.0, 1.0},
                    {"block1_pool", {8, 8, 16}, 0.0, 1.0},
                    {"block2_pool", {4, 4, 32}, 0.0, 1.0},
                    {"fc1", {64}, 0.0, 1.0}};
      if (signal_layer < opt.layers.size()) opt.layers[signal_layer].signal = 0.6;
      const auto data = napkit::make_synthetic(opt);
      napkit::write_dataset(synth_root, data.manifest, data.data);
      std::cout << "wrote " << data.manifest.size() << " examples to " << synth_root.string() << '\n';
      return 0;
    }

    napkit::RunOptions o;
    if (!config_path.empty()) o.config = napkit::load_config(config_path);
    if (!dataset_override.empty()) o.config.dataset_root = dataset_override;
    if (seed) o.config.seed = *seed;
    o.out = out;
    o.jobs = jobs;
    o.force = force;

    const std::string verb = app.get_subcommands().front()->get_name();
    if (verb == "ingest") napkit::cmd_ingest(o);
    if (verb == "nap") napkit::cmd_nap(o);
    if (verb == "layout") napkit::cmd_layout(o);
    if (verb == "render") napkit::cmd_render(o);
    if (verb == "probe") napkit::cmd_probe(o);
    if (verb == "errors") napkit::cmd_errors(o);
    if (verb == "report") {
      napkit::cmd_report(o);
      std::cout << (o.out / "report" / "report.json").string() << '\n';
    }
    return 0;
  } catch (const napkit::Error& e) {
    return report_error(e.kind(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return report_error(napkit::ErrorKind::format, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return report_error(napkit::ErrorKind::io, e.what());
  }
}
