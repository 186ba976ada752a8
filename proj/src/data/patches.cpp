#include "xscene/data/patches.hpp"

#include <algorithm>
#include <random>

namespace xscene::data {

std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * (static_cast<long>(n) - 1);
  long m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<long>(n)) m = period - m;
  return static_cast<std::size_t>(m);
}

Tensor<float> extract_patch(const Scene& scene, std::size_t row, std::size_t col, std::size_t ps) {
  if (ps % 2 == 0) throw ConfigError("patch size must be odd, got " + std::to_string(ps));
  if (row >= scene.height || col >= scene.width) {
    throw DataError("patch centre (" + std::to_string(row) + ", " + std::to_string(col) + ") outside " +
                    std::to_string(scene.height) + "x" + std::to_string(scene.width) + " scene");
  }
  const long half = static_cast<long>(ps / 2);
  Tensor<float> patch(Shape{ps, ps, scene.bands});
  float* dst = patch.ptr();
  for (long dy = -half; dy <= half; ++dy) {
    const std::size_t r = reflect_index(static_cast<long>(row) + dy, scene.height);
    for (long dx = -half; dx <= half; ++dx) {
      const std::size_t c = reflect_index(static_cast<long>(col) + dx, scene.width);
      dst = std::copy_n(scene.pixel(r, c), scene.bands, dst);
    }
  }
  return patch;
}

std::vector<SampleRef> enumerate_labeled(const LabelMap& labels) {
  std::vector<SampleRef> refs;
  for (std::size_t r = 0; r < labels.height; ++r) {
    for (std::size_t c = 0; c < labels.width; ++c) {
      if (const auto l = labels.at(r, c); l > 0) refs.push_back({r, c, l});
    }
  }
  return refs;
}

std::vector<std::vector<SampleRef>> group_by_class(std::span<const SampleRef> refs, std::size_t num_classes) {
  std::vector<std::vector<SampleRef>> groups(num_classes);
  for (const auto& ref : refs) {
    if (ref.label && *ref.label >= 1 && *ref.label <= num_classes) groups[*ref.label - 1].push_back(ref);
  }
  return groups;
}

std::vector<SampleRef> enumerate_all(std::size_t height, std::size_t width) {
  std::vector<SampleRef> refs;
  refs.reserve(height * width);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) refs.push_back({r, c, std::nullopt});
  }
  return refs;
}

std::vector<SampleRef> subsample(std::span<const SampleRef> refs, std::size_t cap, std::uint64_t seed) {
  if (cap == 0 || refs.size() <= cap) return {refs.begin(), refs.end()};
  std::vector<std::size_t> idx(refs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  std::vector<SampleRef> out;
  out.reserve(cap);
  for (auto i : idx) out.push_back(refs[i]);
  return out;
}

std::vector<std::vector<SampleRef>> batch_stream(std::span<const SampleRef> refs, std::size_t batch_size,
                                                 std::uint64_t seed, std::uint64_t epoch, bool drop_last) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (refs.empty()) throw DataError("batch_stream: empty sample list");
  std::vector<SampleRef> order(refs.begin(), refs.end());
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<SampleRef>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    if (end - start < batch_size && drop_last) break;
    batches.emplace_back(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
  }
  return batches;
}

PatchBatch make_batch(const Scene& scene, std::span<const SampleRef> refs, std::size_t ps) {
  PatchBatch batch;
  batch.refs.assign(refs.begin(), refs.end());
  batch.patches = Tensor<float>(Shape{refs.size(), ps, ps, scene.bands});
  const std::size_t stride = ps * ps * scene.bands;
  const bool labeled = !refs.empty() && std::all_of(refs.begin(), refs.end(), [](const auto& r) { return r.label.has_value(); });
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Tensor<float> patch = extract_patch(scene, refs[i].row, refs[i].col, ps);
    std::copy_n(patch.ptr(), stride, batch.patches.ptr() + i * stride);
    if (labeled) batch.labels.push_back(static_cast<int>(*refs[i].label) - 1);
  }
  return batch;
}

CyclingStream::CyclingStream(std::vector<SampleRef> refs, std::size_t batch_size, std::uint64_t seed)
    : refs_(std::move(refs)), batch_size_(batch_size), seed_(seed) {
  if (refs_.empty()) throw DataError("target stream: empty sample list");
}

const std::vector<SampleRef>& CyclingStream::next() {
  while (cursor_ >= batches_.size()) {
    if (!batches_.empty()) ++epoch_;
    // a pool smaller than one batch is used whole rather than dropped
    batches_ = batch_stream(refs_, batch_size_, seed_, epoch_, refs_.size() >= batch_size_);
    cursor_ = 0;
  }
  return batches_[cursor_++];
}

}  // namespace xscene::data
