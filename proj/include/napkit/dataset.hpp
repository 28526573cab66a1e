#pragma once

#include <algorithm>
#include <charconv>
#include <concepts>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "napkit/error.hpp"
#include "napkit/manifest.hpp"
#include "napkit/npy.hpp"
#include "napkit/tensor.hpp"

namespace napkit {

struct LayerSpec {
  std::size_t layer_id = 0;
  std::string name;
  Shape shape;  // per-example: [H, W, C] or [D]

  bool is_spatial() const { return shape.size() == 3; }
  std::size_t channels() const { return shape.back(); }
  std::size_t example_size() const { return element_count(shape); }
  std::string dir_name() const { return std::to_string(layer_id) + "_" + name; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline void validate_layer_shape(const LayerSpec& l) {
  if (l.shape.size() != 1 && l.shape.size() != 3) {
    throw Error(ErrorKind::shape, "layer " + l.dir_name() + " has per-example shape " + shape_string(l.shape) +
                                      "; expected [H, W, C] or [D]");
  }
  for (auto d : l.shape) {
    if (d == 0) throw Error(ErrorKind::shape, "layer " + l.dir_name() + " has a zero-sized axis");
  }
}

// Any type that can hand out per-example activations of a layer.
template <typename S>
concept ActivationSource = requires(const S& s, const LayerSpec& layer) {
  typename S::value_type;
  { s.example_count() } -> std::convertible_to<std::size_t>;
  { s.cursor(layer) };
};

/// Dataset on disk: `<root>/manifest.csv`, `<root>/schema.json`, `<root>/layers/<id>_<name>.npy`.
///
/// Layer files are opened lazily; each cursor owns its own stream, so
/// independent cursors may be used from different threads.
template <typename T = float>
class ActivationDataset {
 public:
  using value_type = T;

  class Cursor {
   public:
    Cursor(const std::filesystem::path& file, const LayerSpec& layer) : reader_(file), layer_(layer) {}

    void read(std::size_t example_id, std::span<T> out) {
      if (example_id >= reader_.rows()) {
        throw Error(ErrorKind::index, "example_id " + std::to_string(example_id) + " out of range for layer " +
                                          layer_.dir_name() + " with " + std::to_string(reader_.rows()) + " examples");
      }
      reader_.read_rows(example_id, 1, out);
    }

   private:
    NpyReader<T> reader_;
    LayerSpec layer_;
  };

  static ActivationDataset open(const std::filesystem::path& root) {
    ActivationDataset ds;
    ds.root_ = root;
    const Schema schema = read_schema(root / "schema.json");
    ds.manifest_ = read_manifest(root / "manifest.csv", schema);
    const auto layer_dir = root / "layers";
    if (!std::filesystem::is_directory(layer_dir)) {
      throw Error(ErrorKind::io, "missing layer directory " + layer_dir.string());
    }
    for (const auto& entry : std::filesystem::directory_iterator(layer_dir)) {
      if (entry.path().extension() != ".npy") continue;
      const std::string stem = entry.path().stem().string();
      const auto us = stem.find('_');
      std::size_t id = 0;
      const auto res = std::from_chars(stem.data(), stem.data() + std::min(us, stem.size()), id);
      if (us == std::string::npos || us == 0 || res.ptr != stem.data() + us) {
        throw Error(ErrorKind::format, "layer file " + entry.path().string() + " is not named <layer_id>_<name>.npy");
      }
      NpyReader<T> reader(entry.path());
      if (reader.shape().empty()) throw Error(ErrorKind::shape, entry.path().string() + ": scalar layer file");
      LayerSpec spec{id, stem.substr(us + 1), Shape(reader.shape().begin() + 1, reader.shape().end())};
      validate_layer_shape(spec);
      if (reader.rows() != ds.manifest_.size()) {
        throw Error(ErrorKind::shape, entry.path().string() + ": leading axis " + std::to_string(reader.rows()) +
                                          " != manifest example count " + std::to_string(ds.manifest_.size()));
      }
      ds.layers_.push_back(std::move(spec));
    }
    std::sort(ds.layers_.begin(), ds.layers_.end(),
              [](const LayerSpec& a, const LayerSpec& b) { return a.layer_id < b.layer_id; });
    for (std::size_t i = 1; i < ds.layers_.size(); ++i) {
      if (ds.layers_[i].layer_id == ds.layers_[i - 1].layer_id) {
        throw Error(ErrorKind::format, "duplicate layer id " + std::to_string(ds.layers_[i].layer_id));
      }
    }
    return ds;
  }

  const Manifest& manifest() const { return manifest_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::filesystem::path& root() const { return root_; }
  std::size_t example_count() const { return manifest_.size(); }

  std::filesystem::path layer_file(const LayerSpec& l) const { return root_ / "layers" / (l.dir_name() + ".npy"); }

  // Looks up by name or by numeric id.
  const LayerSpec& layer(const std::string& key) const {
    for (const auto& l : layers_) {
      if (l.name == key || std::to_string(l.layer_id) == key || l.dir_name() == key) return l;
    }
    throw Error(ErrorKind::argument, "no layer '" + key + "' in dataset " + root_.string());
  }

  Cursor cursor(const LayerSpec& l) const { return Cursor(layer_file(l), l); }

 private:
  std::filesystem::path root_;
  Manifest manifest_;
  std::vector<LayerSpec> layers_;
};

/// In-memory activations, one [N, ...] tensor per layer.
template <typename T>
class InMemoryDataset {
 public:
  using value_type = T;

  class Cursor {
   public:
    explicit Cursor(const BasicTensor<T>& t) : t_(&t) {}

    void read(std::size_t example_id, std::span<T> out) const {
      const std::size_t n = out.size();
      if (example_id >= t_->shape().front()) {
        throw Error(ErrorKind::index, "example_id " + std::to_string(example_id) + " out of range");
      }
      const auto src = t_->data().subspan(example_id * n, n);
      std::copy(src.begin(), src.end(), out.begin());
    }

   private:
    const BasicTensor<T>* t_;
  };

  explicit InMemoryDataset(std::size_t examples) : examples_(examples) {}

  LayerSpec add_layer(LayerSpec spec, BasicTensor<T> data) {
    validate_layer_shape(spec);
    Shape expect{examples_};
    expect.insert(expect.end(), spec.shape.begin(), spec.shape.end());
    if (data.shape() != expect) {
      throw Error(ErrorKind::shape, "layer data shape " + shape_string(data.shape()) + " != " + shape_string(expect));
    }
    layers_.push_back(std::move(spec));
    data_.emplace(layers_.back().layer_id, std::move(data));
    return layers_.back();
  }

  std::size_t example_count() const { return examples_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const BasicTensor<T>& layer_data(const LayerSpec& l) const { return data_.at(l.layer_id); }

  Cursor cursor(const LayerSpec& l) const {
    const auto it = data_.find(l.layer_id);
    if (it == data_.end()) throw Error(ErrorKind::argument, "unknown layer " + l.dir_name());
    return Cursor(it->second);
  }

 private:
  std::size_t examples_;
  std::vector<LayerSpec> layers_;
  std::map<std::size_t, BasicTensor<T>> data_;
};

}  // namespace napkit
