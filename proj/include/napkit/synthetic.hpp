#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "napkit/dataset.hpp"
#include "napkit/manifest.hpp"
#include "napkit/npy.hpp"
#include "napkit/rng.hpp"

namespace napkit {

/// The FairFace vocabularies: 7 race, 9 age and 2 gender categories.
inline Schema fairface_schema() {
  Schema s;
  s.vocabularies[0] = {"White",           "Black",  "Latino_Hispanic", "East Asian",
                       "Southeast Asian", "Indian", "Middle Eastern"};
  s.vocabularies[1] = {"0-2", "3-9", "10-19", "20-29", "30-39", "40-49", "50-59", "60-69", "more than 70"};
  s.vocabularies[2] = {"Male", "Female"};
  return s;
}

struct SyntheticLayer {
  std::string name;
  Shape shape;
  double signal = 0.0;  // scale of the per-group mean offset
  double noise = 1.0;
};

struct SyntheticOptions {
  Schema schema = fairface_schema();
  std::size_t per_group = 20;
  std::vector<std::size_t> group_sizes;  // overrides per_group when non-empty (by class id)
  std::vector<SyntheticLayer> layers;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  Manifest manifest;
  InMemoryDataset<float> data{0};
};

/// Examples of group c in layer l are signal * center(c, l) + noise * N(0, 1),
/// with seeded standard-normal centers.
inline SyntheticData make_synthetic(const SyntheticOptions& opt) {
  SyntheticData out;
  out.manifest.schema = opt.schema;
  const std::size_t K = opt.schema.group_count();
  const std::size_t G = opt.schema.size(Variable::gender), A = opt.schema.size(Variable::age);
  for (std::size_t c = 0; c < K; ++c) {
    const std::size_t n = opt.group_sizes.empty() ? opt.per_group : opt.group_sizes.at(c);
    for (std::size_t i = 0; i < n; ++i) {
      ExampleRecord r;
      r.example_id = out.manifest.examples.size();
      r.image_path = "images/" + std::to_string(r.example_id) + ".jpg";
      r.labels = {c / (A * G), (c / G) % A, c % G};
      out.manifest.examples.push_back(r);
    }
  }
  const std::size_t N = out.manifest.size();
  out.data = InMemoryDataset<float>(N);
  for (std::size_t l = 0; l < opt.layers.size(); ++l) {
    const auto& spec = opt.layers[l];
    const std::size_t D = element_count(spec.shape);
    std::vector<double> centers(K * D);
    Rng center_rng(mix_seed(opt.seed, 1000 + l));
    for (auto& v : centers) v = center_rng.normal();
    Rng noise_rng(mix_seed(opt.seed, 2000 + l));
    Shape full{N};
    full.insert(full.end(), spec.shape.begin(), spec.shape.end());
    BasicTensor<float> t(full);
    for (std::size_t e = 0; e < N; ++e) {
      const auto& lab = out.manifest.examples[e].labels;
      const std::size_t c = (lab[0] * A + lab[1]) * G + lab[2];
      for (std::size_t d = 0; d < D; ++d) {
        t[e * D + d] = static_cast<float>(spec.signal * centers[c * D + d] + spec.noise * noise_rng.normal());
      }
    }
    out.data.add_layer(LayerSpec{l, spec.name, spec.shape}, std::move(t));
  }
  return out;
}

/// Writes `root` in the on-disk dataset layout.
inline void write_dataset(const std::filesystem::path& root, const Manifest& manifest,
                          const InMemoryDataset<float>& data) {
  std::filesystem::create_directories(root / "layers");
  write_manifest(manifest, root / "manifest.csv");
  std::ofstream schema(root / "schema.json", std::ios::trunc);
  if (!schema) throw Error(ErrorKind::io, "cannot write " + (root / "schema.json").string());
  schema << schema_to_json(manifest.schema).dump(2) << '\n';
  for (const auto& l : data.layers()) write_array_file(data.layer_data(l), root / "layers" / (l.dir_name() + ".npy"));
}

}  // namespace napkit
