#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace xscene::eval {

/// counts[t * C + p]: rows are true classes, columns predicted classes (both 0-based here).
struct ConfusionMatrix {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t c = 0) : num_classes(c), counts(c * c, 0) {}
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * num_classes + pred]; }
  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * num_classes + pred]; }
  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t c) const;
  std::uint64_t col_sum(std::size_t c) const;
  static ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows);
};

/// Tallies (truth, pred) pairs with labels in 1..C; pairs whose truth is 0 are skipped.
ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> truths, std::size_t num_classes);

struct MetricsReport {
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
  std::vector<double> per_class;      // recall; 0 for classes without support
  std::vector<bool> class_present;    // false marks a class excluded from AA
  std::uint64_t n_eval = 0;
};

/// OA, AA over supported classes, and Cohen's kappa (0 when chance agreement is 1).
MetricsReport metrics(const ConfusionMatrix& cm);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single run
};

struct Aggregate {
  std::size_t runs = 0;
  MeanStd oa, aa, kappa;
  std::vector<MeanStd> per_class;
};

Aggregate aggregate_runs(std::span<const MetricsReport> reports);
MeanStd mean_std(std::span<const double> values);

/// "80.23±1.92" with values multiplied by `scale`.
std::string format_mean_std(const MeanStd& v, double scale = 100.0, int decimals = 2);

/// Plain-text report: one "key: value" per line, then a per-class table.
std::string format_report(const MetricsReport& r, const std::vector<std::string>& class_names = {});
std::string format_aggregate(const Aggregate& a, const std::vector<std::string>& class_names = {});

using Rgb = std::array<std::uint8_t, 3>;

/// Entry 0 is black background, then one distinct colour per class.
std::vector<Rgb> default_palette(std::size_t num_classes);

/// Binary P6 image of a row-major class raster (0 = background).
std::string ppm_bytes(std::span<const std::uint16_t> raster, std::size_t height, std::size_t width,
                      std::span<const Rgb> palette);
void render_map(const std::filesystem::path& path, std::span<const std::uint16_t> raster, std::size_t height,
                std::size_t width, std::span<const Rgb> palette);
void write_palette_json(const std::filesystem::path& path, std::span<const Rgb> palette,
                        const std::vector<std::string>& class_names = {});

}  // namespace xscene::eval
