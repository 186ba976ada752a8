#pragma once

#include <cstdint>
#include <vector>

#include "xscene/data/scene.hpp"

namespace xscene::data {

/// Per-band affine map applied to the class prototypes of the target scene.
/// A single entry broadcasts over all bands.
struct ShiftSpec {
  std::vector<double> gain{1.0};
  std::vector<double> offset{0.0};

  static ShiftSpec identity() { return {}; }
  static ShiftSpec uniform(double gain, double offset) { return {{gain}, {offset}}; }

  double gain_at(std::size_t band) const { return gain.size() == 1 ? gain[0] : gain.at(band); }
  double offset_at(std::size_t band) const { return offset.size() == 1 ? offset[0] : offset.at(band); }
};

struct SynthParams {
  std::size_t num_classes = 5;
  std::size_t bands = 16;
  std::size_t blob_grid = 5;   // blobs per side
  std::size_t blob_size = 9;   // pixels per blob side
  ShiftSpec shift = ShiftSpec::uniform(1.3, 0.1);
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;
};

struct DomainPair {
  SceneBundle source;
  SceneBundle target;
};

/// Mean spectrum of every class, [num_classes][bands]. Each is a Gaussian
/// bump over the band axis on top of a class-specific baseline.
std::vector<std::vector<double>> class_prototypes(std::size_t num_classes, std::size_t bands);

/// Class of the blob at grid cell (i, j), 1-based. Independent of the seed.
std::uint16_t blob_class(std::size_t i, std::size_t j, std::size_t num_classes);

/// Two scenes with identical blob layouts. Source pixels are prototype plus
/// i.i.d. Gaussian noise; target pixels are gain * prototype + offset plus
/// independent noise. Fully determined by `params`.
DomainPair synth_domain_pair(const SynthParams& params);

}  // namespace xscene::data
