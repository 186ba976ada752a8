#include "xscene/eval/evaluate.hpp"

#include "xscene/data/patches.hpp"

namespace xscene::eval {

template <typename T>
EvalResult evaluate_scene(model::DualHeadNet<T>& net, const data::SceneBundle& bundle, const EvalOptions& opts) {
  const auto& cfg = net.config();
  const data::Scene& scene = bundle.scene;
  if (scene.bands != cfg.input_bands) {
    throw DataError("scene '" + scene.name + "' has " + std::to_string(scene.bands) + " bands, model expects " +
                    std::to_string(cfg.input_bands));
  }
  if (bundle.labels.height != scene.height || bundle.labels.width != scene.width) {
    throw DataError("label map does not match scene '" + scene.name + "'");
  }
  if (bundle.labels.num_classes() > cfg.num_classes) {
    throw DataError("scene '" + scene.name + "' has " + std::to_string(bundle.labels.num_classes()) +
                    " classes, model predicts " + std::to_string(cfg.num_classes));
  }
  const std::size_t batch = std::max<std::size_t>(1, opts.batch_size);
  const std::vector<data::SampleRef> refs = opts.predict_all ? data::enumerate_all(scene.height, scene.width)
                                                             : data::enumerate_labeled(bundle.labels);
  EvalResult out;
  out.raster.assign(scene.height * scene.width, 0);
  std::vector<int> preds, truths;
  for (std::size_t start = 0; start < refs.size(); start += batch) {
    const std::size_t end = std::min(refs.size(), start + batch);
    const std::span<const data::SampleRef> chunk(refs.data() + start, end - start);
    const auto labels = net.predict(data::make_batch(scene, chunk, cfg.patch_size).patches);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto& r = chunk[i];
      out.raster[r.row * scene.width + r.col] = static_cast<std::uint16_t>(labels[i] + 1);
      const std::uint16_t truth = bundle.labels.at(r.row, r.col);
      if (truth > 0) {
        preds.push_back(labels[i] + 1);
        truths.push_back(truth);
      }
    }
  }
  out.confusion = confusion(preds, truths, cfg.num_classes);
  out.report = metrics(out.confusion);
  return out;
}

template EvalResult evaluate_scene<float>(model::DualHeadNet<float>&, const data::SceneBundle&, const EvalOptions&);
template EvalResult evaluate_scene<double>(model::DualHeadNet<double>&, const data::SceneBundle&, const EvalOptions&);

}  // namespace xscene::eval
