#include "xscene/data/synth.hpp"

#include <cmath>
#include <random>

namespace xscene::data {

std::vector<std::vector<double>> class_prototypes(std::size_t num_classes, std::size_t bands) {
  std::vector<std::vector<double>> protos(num_classes, std::vector<double>(bands));
  const double spacing = static_cast<double>(bands) / static_cast<double>(num_classes);
  const double width = 0.6 * spacing;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double centre = (static_cast<double>(c) + 0.5) * spacing;
    const double baseline = 0.2 + 0.1 * static_cast<double>(c) / static_cast<double>(num_classes);
    for (std::size_t b = 0; b < bands; ++b) {
      const double d = (static_cast<double>(b) - centre) / width;
      protos[c][b] = baseline + 0.4 * std::exp(-0.5 * d * d);
    }
  }
  return protos;
}

std::uint16_t blob_class(std::size_t i, std::size_t j, std::size_t num_classes) {
  return static_cast<std::uint16_t>((2 * i + j) % num_classes + 1);
}

namespace {

SceneBundle render(const SynthParams& p, const std::vector<std::vector<double>>& protos, const ShiftSpec& shift,
                   std::uint64_t stream, const char* name) {
  const std::size_t side = p.blob_grid * p.blob_size;
  SceneBundle out;
  Scene& s = out.scene;
  s.name = name;
  s.height = s.width = side;
  s.bands = p.bands;
  s.cube = Tensor<float>(Shape{side, side, p.bands});

  LabelMap& l = out.labels;
  l.height = l.width = side;
  l.labels.resize(side * side);
  for (std::size_t c = 0; c < p.num_classes; ++c) l.class_names.push_back("class" + std::to_string(c + 1));

  std::seed_seq seq{static_cast<std::uint32_t>(p.seed), static_cast<std::uint32_t>(p.seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> noise(0.0, p.noise_sigma);
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      const std::uint16_t cls = blob_class(r / p.blob_size, c / p.blob_size, p.num_classes);
      l.labels[r * side + c] = cls;
      const auto& proto = protos[cls - 1];
      for (std::size_t b = 0; b < p.bands; ++b) {
        const double v = shift.gain_at(b) * proto[b] + shift.offset_at(b) + (p.noise_sigma > 0 ? noise(rng) : 0.0);
        s.cube[(r * side + c) * p.bands + b] = static_cast<float>(v);
      }
    }
  }
  l.expected_counts = l.class_counts();
  return out;
}

}  // namespace

DomainPair synth_domain_pair(const SynthParams& p) {
  if (p.num_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (p.bands < 2) throw ConfigError("synthetic data needs at least 2 bands");
  if (p.blob_grid == 0 || p.blob_size == 0) throw ConfigError("blob grid and blob size must be positive");
  if (p.noise_sigma < 0) throw ConfigError("noise sigma must be non-negative");
  const auto check_len = [&](const std::vector<double>& v, const char* what) {
    if (v.size() != 1 && v.size() != p.bands) {
      throw ConfigError(std::string("shift ") + what + " must have 1 or " + std::to_string(p.bands) + " entries");
    }
  };
  check_len(p.shift.gain, "gain");
  check_len(p.shift.offset, "offset");
  for (double g : p.shift.gain) {
    if (g == 0.0 || !std::isfinite(g)) throw ConfigError("degenerate shift: gain must be finite and non-zero");
  }

  const auto protos = class_prototypes(p.num_classes, p.bands);
  DomainPair pair;
  pair.source = render(p, protos, ShiftSpec::identity(), 0, "synth-source");
  pair.target = render(p, protos, p.shift, 1, "synth-target");
  return pair;
}

}  // namespace xscene::data
