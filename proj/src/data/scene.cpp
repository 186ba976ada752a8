#include "xscene/data/scene.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace xscene::data {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_bytes(const fs::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw DataError("short write to " + path.string());
}

template <typename U>
U load_le(const char* src) {
  U v;
  std::memcpy(&v, src, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(U));
  }
  return v;
}

template <typename U>
void store_le(U v, char* dst) {
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(U));
  }
  std::memcpy(dst, &v, sizeof(U));
}

std::size_t positive_field(const json& meta, const char* key, const fs::path& path) {
  if (!meta.contains(key) || !meta[key].is_number_integer() || meta[key].get<long long>() <= 0) {
    throw DataError(path.string() + ": field '" + key + "' must be a positive integer");
  }
  return meta[key].get<std::size_t>();
}

}  // namespace

std::size_t LabelMap::num_classes() const {
  if (!class_names.empty()) return class_names.size();
  std::uint16_t mx = 0;
  for (auto l : labels) mx = std::max(mx, l);
  return mx;
}

std::vector<std::size_t> LabelMap::class_counts() const {
  std::vector<std::size_t> counts(num_classes(), 0);
  for (auto l : labels) {
    if (l > 0 && l <= counts.size()) ++counts[l - 1];
  }
  return counts;
}

SceneBundle load_scene(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  const fs::path cube_path = dir / "cube.bin";
  const fs::path gt_path = dir / "gt.bin";
  for (const auto& p : {meta_path, cube_path, gt_path}) {
    if (!fs::exists(p)) throw DataError("missing bundle file " + p.string());
  }
  const json meta = read_json(meta_path);
  const std::size_t h = positive_field(meta, "height", meta_path);
  const std::size_t w = positive_field(meta, "width", meta_path);
  const std::size_t b = positive_field(meta, "bands", meta_path);
  const std::string dtype = meta.value("dtype", "f32");
  const std::string layout = meta.value("layout", "bsq");
  if (dtype != "f32") throw DataError(meta_path.string() + ": unknown dtype '" + dtype + "'");
  if (layout != "bsq") throw DataError(meta_path.string() + ": unknown layout '" + layout + "'");

  const std::vector<char> raw = read_file(cube_path);
  const std::size_t expected = h * w * b;
  if (raw.size() != expected * sizeof(float)) {
    throw DataError(cube_path.string() + ": shape mismatch, metadata " + std::to_string(h) + "x" + std::to_string(w) +
                    "x" + std::to_string(b) + " needs " + std::to_string(expected) + " values but file holds " +
                    std::to_string(raw.size() / sizeof(float)) + (raw.size() % sizeof(float) ? " (+ partial)" : ""));
  }

  SceneBundle out;
  Scene& scene = out.scene;
  scene.name = meta.value("name", dir.filename().string());
  scene.height = h;
  scene.width = w;
  scene.bands = b;
  scene.cube = Tensor<float>(Shape{h, w, b});
  for (std::size_t band = 0; band < b; ++band) {
    for (std::size_t px = 0; px < h * w; ++px) {
      scene.cube[px * b + band] = load_le<float>(raw.data() + (band * h * w + px) * sizeof(float));
    }
  }
  if (!scene.cube.all_finite()) throw DataError(cube_path.string() + ": cube contains non-finite values");

  const std::vector<char> gt = read_file(gt_path);
  if (gt.size() != h * w * sizeof(std::uint16_t)) {
    throw DataError(gt_path.string() + ": shape mismatch, expected " + std::to_string(h * w) + " labels");
  }
  LabelMap& labels = out.labels;
  labels.height = h;
  labels.width = w;
  labels.labels.resize(h * w);
  for (std::size_t px = 0; px < h * w; ++px) {
    labels.labels[px] = load_le<std::uint16_t>(gt.data() + px * sizeof(std::uint16_t));
  }

  const fs::path classes_path = dir / "classes.json";
  if (fs::exists(classes_path)) {
    const json classes = read_json(classes_path);
    labels.class_names = classes.at("names").get<std::vector<std::string>>();
    if (classes.contains("counts")) labels.expected_counts = classes["counts"].get<std::vector<std::size_t>>();
    if (!labels.expected_counts.empty() && labels.expected_counts.size() != labels.class_names.size()) {
      throw DataError(classes_path.string() + ": 'counts' and 'names' differ in length");
    }
    const std::size_t c = labels.class_names.size();
    for (auto l : labels.labels) {
      if (l > c) {
        throw DataError(gt_path.string() + ": label " + std::to_string(l) + " exceeds class count " + std::to_string(c));
      }
    }
    if (!labels.expected_counts.empty() && labels.class_counts() != labels.expected_counts) {
      throw DataError(gt_path.string() + ": per-class label counts disagree with " + classes_path.string());
    }
  }
  return out;
}

void save_scene(const fs::path& dir, const Scene& scene, const LabelMap& labels) {
  if (scene.cube.size() != scene.height * scene.width * scene.bands) {
    throw DataError("scene '" + scene.name + "' cube does not match its dimensions");
  }
  if (labels.height != scene.height || labels.width != scene.width || labels.labels.size() != scene.height * scene.width) {
    throw DataError("label map does not match scene '" + scene.name + "'");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

  const std::size_t hw = scene.height * scene.width;
  std::vector<char> cube(hw * scene.bands * sizeof(float));
  for (std::size_t band = 0; band < scene.bands; ++band) {
    for (std::size_t px = 0; px < hw; ++px) {
      store_le(scene.cube[px * scene.bands + band], cube.data() + (band * hw + px) * sizeof(float));
    }
  }
  write_bytes(dir / "cube.bin", cube.data(), cube.size());

  std::vector<char> gt(hw * sizeof(std::uint16_t));
  for (std::size_t px = 0; px < hw; ++px) store_le(labels.labels[px], gt.data() + px * sizeof(std::uint16_t));
  write_bytes(dir / "gt.bin", gt.data(), gt.size());

  json meta = {{"height", scene.height}, {"width", scene.width}, {"bands", scene.bands},
               {"dtype", "f32"},         {"layout", "bsq"},      {"name", scene.name}};
  const std::string meta_text = meta.dump(2) + "\n";
  write_bytes(dir / "meta.json", meta_text.data(), meta_text.size());

  if (!labels.class_names.empty()) {
    json classes = {{"names", labels.class_names}};
    if (!labels.expected_counts.empty()) classes["counts"] = labels.expected_counts;
    const std::string text = classes.dump(2) + "\n";
    write_bytes(dir / "classes.json", text.data(), text.size());
  }
}

Normalization parse_normalization(std::string_view name) {
  if (name == "minmax") return Normalization::MinMax;
  if (name == "zscore") return Normalization::ZScore;
  if (name == "none") return Normalization::None;
  throw ConfigError("unknown normalization '" + std::string(name) + "' (expected minmax, zscore or none)");
}

std::string_view normalization_name(Normalization mode) {
  switch (mode) {
    case Normalization::MinMax: return "minmax";
    case Normalization::ZScore: return "zscore";
    case Normalization::None: return "none";
  }
  return "none";
}

Scene normalize_scene(Scene scene, Normalization mode) {
  if (mode == Normalization::None) return scene;
  const std::size_t hw = scene.height * scene.width, b = scene.bands;
  for (std::size_t band = 0; band < b; ++band) {
    double lo = INFINITY, hi = -INFINITY, sum = 0.0;
    for (std::size_t px = 0; px < hw; ++px) {
      const double v = scene.cube[px * b + band];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
    }
    const double mean = sum / static_cast<double>(hw);
    double shift = 0.0, inv = 0.0;
    if (mode == Normalization::MinMax) {
      shift = lo;
      inv = hi > lo ? 1.0 / (hi - lo) : 0.0;
    } else {
      double ss = 0.0;
      for (std::size_t px = 0; px < hw; ++px) {
        const double d = scene.cube[px * b + band] - mean;
        ss += d * d;
      }
      const double sd = std::sqrt(ss / static_cast<double>(hw));
      shift = mean;
      inv = sd > 0.0 ? 1.0 / sd : 0.0;
    }
    for (std::size_t px = 0; px < hw; ++px) {
      float& v = scene.cube[px * b + band];
      v = static_cast<float>((v - shift) * inv);
    }
  }
  return scene;
}

}  // namespace xscene::data
