#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "xscene/data/scene.hpp"

namespace xscene::data {

struct SampleRef {
  std::size_t row = 0;
  std::size_t col = 0;
  std::optional<std::uint16_t> label;  // class 1..C, none for unlabeled samples

  friend bool operator==(const SampleRef&, const SampleRef&) = default;
};

/// A batch of ps x ps x B patches. `labels` holds 0-based class indices
/// (label - 1) and is empty for unlabeled batches.
struct PatchBatch {
  Tensor<float> patches;  // [N, ps, ps, B]
  std::vector<int> labels;
  std::vector<SampleRef> refs;

  std::size_t size() const { return refs.size(); }
  bool labeled() const { return !labels.empty(); }
};

/// Index reflected into [0, n) without repeating the edge sample
/// (-1 -> 1, n -> n - 2). Works for offsets wider than the image.
std::size_t reflect_index(long i, std::size_t n);

/// Patch centred at (row, col); positions outside the scene are mirrored.
/// Throws ConfigError for even `ps` and DataError for an out-of-bounds centre.
Tensor<float> extract_patch(const Scene& scene, std::size_t row, std::size_t col, std::size_t ps);

/// Every pixel with a label > 0, in raster order.
std::vector<SampleRef> enumerate_labeled(const LabelMap& labels);

/// Refs of `enumerate_labeled` split per class (index 0 is class 1).
std::vector<std::vector<SampleRef>> group_by_class(std::span<const SampleRef> refs, std::size_t num_classes);

/// Every pixel of the scene, unlabeled, in raster order.
std::vector<SampleRef> enumerate_all(std::size_t height, std::size_t width);

/// Uniform seeded subsample of at most `cap` refs, kept in raster order. cap 0 keeps everything.
std::vector<SampleRef> subsample(std::span<const SampleRef> refs, std::size_t cap, std::uint64_t seed);

/// Batches of one epoch: refs shuffled by a generator seeded with (seed, epoch)
/// and cut into runs of `batch_size`. The trailing partial batch is dropped
/// when `drop_last` is set. Throws DataError on an empty list.
std::vector<std::vector<SampleRef>> batch_stream(std::span<const SampleRef> refs, std::size_t batch_size,
                                                 std::uint64_t seed, std::uint64_t epoch, bool drop_last = true);

/// Materialises patches for `refs`; labels are filled when every ref carries one.
PatchBatch make_batch(const Scene& scene, std::span<const SampleRef> refs, std::size_t ps);

/// Endless zip partner for the source stream: yields target batches epoch
/// after epoch with its own independent seed.
class CyclingStream {
 public:
  CyclingStream(std::vector<SampleRef> refs, std::size_t batch_size, std::uint64_t seed);

  const std::vector<SampleRef>& next();
  std::uint64_t epoch() const { return epoch_; }

 private:
  std::vector<SampleRef> refs_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::vector<SampleRef>> batches_;
};

}  // namespace xscene::data
