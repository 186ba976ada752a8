#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "xscene/core/tensor.hpp"

namespace xscene::data {

/// Hyperspectral cube stored pixel-interleaved: cube[(row * width + col) * bands + band].
struct Scene {
  std::string name;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t bands = 0;
  Tensor<float> cube;  // [H, W, B]

  float at(std::size_t row, std::size_t col, std::size_t band) const {
    return cube[(row * width + col) * bands + band];
  }
  const float* pixel(std::size_t row, std::size_t col) const { return cube.ptr() + (row * width + col) * bands; }
};

/// Integer class raster. 0 is unlabeled; classes are 1..num_classes().
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> labels;  // row-major
  std::vector<std::string> class_names;
  std::vector<std::size_t> expected_counts;  // empty when the manifest has no counts

  std::uint16_t at(std::size_t row, std::size_t col) const { return labels[row * width + col]; }
  /// Number of classes: the manifest's class list when present, else the largest label.
  std::size_t num_classes() const;
  /// Per-class pixel counts, index 0 for class 1.
  std::vector<std::size_t> class_counts() const;
};

struct SceneBundle {
  Scene scene;
  LabelMap labels;
};

/// Reads a bundle directory: cube.bin (f32 little-endian, band-sequential),
/// meta.json, gt.bin (u16 little-endian, row-major) and optional classes.json.
/// Throws DataError on any missing file, size mismatch, unknown dtype/layout,
/// label above the class count or count disagreement with the manifest.
SceneBundle load_scene(const std::filesystem::path& bundle_dir);

/// Writes the bundle format read by load_scene. classes.json is written when
/// the label map carries class names.
void save_scene(const std::filesystem::path& bundle_dir, const Scene& scene, const LabelMap& labels);

enum class Normalization { MinMax, ZScore, None };

Normalization parse_normalization(std::string_view name);
std::string_view normalization_name(Normalization mode);

/// Per-band rescaling over the whole scene. Constant bands map to 0.
Scene normalize_scene(Scene scene, Normalization mode);

}  // namespace xscene::data
