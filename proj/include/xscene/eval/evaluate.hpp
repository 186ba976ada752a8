#pragma once

#include "xscene/data/scene.hpp"
#include "xscene/eval/metrics.hpp"
#include "xscene/model/network.hpp"

namespace xscene::eval {

struct EvalOptions {
  std::size_t batch_size = 256;
  bool predict_all = false;  // also classify unlabeled pixels for map rendering
};

struct EvalResult {
  MetricsReport report;
  ConfusionMatrix confusion;
  std::vector<std::uint16_t> raster;  // predicted class 1..C per pixel, 0 where not predicted
};

/// Classifies the labeled pixels (and optionally every pixel) of a normalised
/// scene with the extractor and h_cls in eval mode.
template <typename T>
EvalResult evaluate_scene(model::DualHeadNet<T>& net, const data::SceneBundle& bundle, const EvalOptions& opts = {});

}  // namespace xscene::eval
