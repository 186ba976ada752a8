#include "xscene/eval/metrics.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "xscene/core/error.hpp"

namespace xscene::eval {

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::row_sum(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < num_classes; ++p) s += at(c, p);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t t = 0; t < num_classes; ++t) s += at(t, c);
  return s;
}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
  ConfusionMatrix cm(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t].size() != rows.size()) throw ShapeError("confusion matrix must be square");
    for (std::size_t p = 0; p < rows.size(); ++p) cm.at(t, p) = rows[t][p];
  }
  return cm;
}

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> truths, std::size_t num_classes) {
  if (preds.size() != truths.size()) {
    throw ShapeError("confusion: " + std::to_string(preds.size()) + " predictions for " +
                     std::to_string(truths.size()) + " labels");
  }
  ConfusionMatrix cm(num_classes);
  const int c = static_cast<int>(num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (truths[i] == 0) continue;
    if (truths[i] < 0 || truths[i] > c || preds[i] < 1 || preds[i] > c) {
      throw DataError("confusion: label pair (" + std::to_string(truths[i]) + ", " + std::to_string(preds[i]) +
                      ") outside 1.." + std::to_string(c));
    }
    ++cm.at(static_cast<std::size_t>(truths[i] - 1), static_cast<std::size_t>(preds[i] - 1));
  }
  return cm;
}

MetricsReport metrics(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw DataError("metrics of an empty confusion matrix");
  const std::size_t c = cm.num_classes;
  const double n = static_cast<double>(total);
  MetricsReport r;
  r.n_eval = total;
  r.per_class.assign(c, 0.0);
  r.class_present.assign(c, false);

  std::uint64_t diag = 0;
  double pe = 0.0, aa_sum = 0.0;
  std::size_t supported = 0;
  for (std::size_t k = 0; k < c; ++k) {
    diag += cm.at(k, k);
    const std::uint64_t row = cm.row_sum(k);
    pe += static_cast<double>(row) * static_cast<double>(cm.col_sum(k));
    if (row > 0) {
      r.class_present[k] = true;
      r.per_class[k] = static_cast<double>(cm.at(k, k)) / static_cast<double>(row);
      aa_sum += r.per_class[k];
      ++supported;
    }
  }
  pe /= n * n;
  r.oa = static_cast<double>(diag) / n;
  r.aa = aa_sum / static_cast<double>(supported);
  r.kappa = pe >= 1.0 ? 0.0 : (r.oa - pe) / (1.0 - pe);
  return r;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw Error("mean_std of an empty list");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

Aggregate aggregate_runs(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw Error("aggregate_runs needs at least one report");
  auto collect = [&](auto field) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(field(r));
    return mean_std(v);
  };
  Aggregate a;
  a.runs = reports.size();
  a.oa = collect([](const MetricsReport& r) { return r.oa; });
  a.aa = collect([](const MetricsReport& r) { return r.aa; });
  a.kappa = collect([](const MetricsReport& r) { return r.kappa; });
  const std::size_t c = reports.front().per_class.size();
  for (std::size_t k = 0; k < c; ++k) {
    a.per_class.push_back(collect([k](const MetricsReport& r) { return r.per_class.at(k); }));
  }
  return a;
}

std::string format_mean_std(const MeanStd& v, double scale, int decimals) {
  return fmt::format("{:.{}f}±{:.{}f}", v.mean * scale, decimals, v.std * scale, decimals);
}

namespace {

std::string class_label(const std::vector<std::string>& names, std::size_t k) {
  return k < names.size() ? names[k] : "class" + std::to_string(k + 1);
}

}  // namespace

std::string format_report(const MetricsReport& r, const std::vector<std::string>& names) {
  std::string out;
  out += fmt::format("n_eval: {}\n", r.n_eval);
  out += fmt::format("oa: {:.2f}\n", r.oa * 100.0);
  out += fmt::format("aa: {:.2f}\n", r.aa * 100.0);
  out += fmt::format("kappa_x100: {:.2f}\n", r.kappa * 100.0);
  out += "\nclass\tname\taccuracy\n";
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    out += fmt::format("{}\t{}\t{}\n", k + 1, class_label(names, k),
                       r.class_present[k] ? fmt::format("{:.2f}", r.per_class[k] * 100.0) : "n/a (no support)");
  }
  return out;
}

std::string format_aggregate(const Aggregate& a, const std::vector<std::string>& names) {
  std::string out;
  out += fmt::format("runs: {}\n", a.runs);
  out += fmt::format("oa: {}\n", format_mean_std(a.oa));
  out += fmt::format("aa: {}\n", format_mean_std(a.aa));
  out += fmt::format("kappa_x100: {}\n", format_mean_std(a.kappa));
  out += "\nclass\tname\taccuracy\n";
  for (std::size_t k = 0; k < a.per_class.size(); ++k) {
    out += fmt::format("{}\t{}\t{}\n", k + 1, class_label(names, k), format_mean_std(a.per_class[k]));
  }
  return out;
}

std::vector<Rgb> default_palette(std::size_t num_classes) {
  static constexpr Rgb base[] = {
      {230, 25, 75},   {60, 180, 75},   {255, 225, 25}, {0, 130, 200},   {245, 130, 48},  {145, 30, 180},
      {70, 240, 240},  {240, 50, 230},  {210, 245, 60}, {250, 190, 212}, {0, 128, 128},   {220, 190, 255},
      {170, 110, 40},  {255, 250, 200}, {128, 0, 0},    {170, 255, 195}, {128, 128, 0},   {255, 215, 180},
      {0, 0, 128},     {128, 128, 128},
  };
  std::vector<Rgb> out{{0, 0, 0}};
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (k < std::size(base)) {
      out.push_back(base[k]);
    } else {
      // golden-ratio hue walk for large class counts
      const double h = std::fmod(0.618033988749895 * static_cast<double>(k), 1.0) * 6.0;
      const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
      double rgb[3] = {0, 0, 0};
      const int sector = static_cast<int>(h);
      const int order[6][3] = {{0, 1, 2}, {1, 0, 2}, {2, 0, 1}, {2, 1, 0}, {1, 2, 0}, {0, 2, 1}};
      rgb[order[sector][0]] = 1.0;
      rgb[order[sector][1]] = x;
      out.push_back({static_cast<std::uint8_t>(rgb[0] * 200 + 40), static_cast<std::uint8_t>(rgb[1] * 200 + 40),
                     static_cast<std::uint8_t>(rgb[2] * 200 + 40)});
    }
  }
  return out;
}

std::string ppm_bytes(std::span<const std::uint16_t> raster, std::size_t height, std::size_t width,
                      std::span<const Rgb> palette) {
  if (raster.size() != height * width) throw ShapeError("raster size does not match the image dimensions");
  std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + raster.size() * 3);
  for (std::size_t i = 0; i < raster.size(); ++i) {
    if (raster[i] >= palette.size()) {
      throw ConfigError("palette has " + std::to_string(palette.size()) + " entries, raster uses class " +
                        std::to_string(raster[i]));
    }
    const Rgb& c = palette[raster[i]];
    for (int k = 0; k < 3; ++k) out[header + 3 * i + k] = static_cast<char>(c[k]);
  }
  return out;
}

void render_map(const std::filesystem::path& path, std::span<const std::uint16_t> raster, std::size_t height,
                std::size_t width, std::span<const Rgb> palette) {
  const std::string bytes = ppm_bytes(raster, height, width, palette);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_palette_json(const std::filesystem::path& path, std::span<const Rgb> palette,
                        const std::vector<std::string>& names) {
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t k = 0; k < palette.size(); ++k) {
    j.push_back({{"class", k},
                 {"name", k == 0 ? std::string("background") : class_label(names, k - 1)},
                 {"rgb", {palette[k][0], palette[k][1], palette[k][2]}}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace xscene::eval
