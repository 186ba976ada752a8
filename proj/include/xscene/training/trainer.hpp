#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xscene/data/patches.hpp"
#include "xscene/data/scene.hpp"
#include "xscene/discrepancy/lmmd.hpp"
#include "xscene/eval/evaluate.hpp"
#include "xscene/model/network.hpp"

namespace xscene::train {

struct LossWeights {
  double lambda_lmmd = 1.0;
  double lambda_st = 1.0;
  double tau = 0.95;
};

struct Ablation {
  bool use_cfaac = true;
  bool use_lmmd = true;
  bool use_st = true;
  bool use_pseudo_head = true;  // false: pseudo labels supervise h_cls itself
  friend bool operator==(const Ablation&, const Ablation&) = default;
};

enum class PseudoTargets { Hard, Soft };
enum class TargetPool { Labeled, All };

PseudoTargets parse_pseudo_targets(std::string_view s);
std::string_view pseudo_targets_name(PseudoTargets p);
TargetPool parse_target_pool(std::string_view s);
std::string_view target_pool_name(TargetPool p);

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch = 100;
  double lr0 = 0.01;
  double alpha = 10.0;
  double beta = 0.75;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t patch_size = 9;
  std::uint64_t seed = 0;
  Ablation ablation;
  model::CfaacConfig cfaac;
  model::HeadKind head = model::HeadKind::Pooled;
  std::array<std::size_t, 3> unit_channels{32, 64, 32};
  LossWeights weights;
  disc::KernelSpec kernel;
  std::size_t warmup_epochs = 0;           // epochs before the self-training term switches on
  PseudoTargets pseudo_targets = PseudoTargets::Hard;
  TargetPool target_pool = TargetPool::Labeled;
  std::size_t target_cap = 0;              // 0 keeps every eligible target pixel
  bool record_wall_time = true;

  void validate() const;
};

/// Mean cross-entropy of softmax(logits) against 0-based labels, computed
/// with a log-sum-exp. Throws DataError for a label outside 0..C-1.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels);

/// Same against full target distributions (rows of `targets`).
template <typename T>
Var<T> cross_entropy_soft(const Var<T>& logits, const Tensor<T>& targets);

/// -mean_i log p[i, y_i] for given probabilities.
double cross_entropy_probs(const Tensor<double>& probs, std::span<const int> labels);

struct PseudoSelection {
  std::vector<bool> mask;
  std::vector<int> labels;      // arg-max, first index on ties
  std::vector<std::size_t> rows;  // indices with mask set
};

/// Rows whose largest probability strictly exceeds tau.
template <typename T>
PseudoSelection select_pseudo(const Tensor<T>& probs, double tau);

/// Mean cross-entropy of `head` on the selected target rows against the
/// pseudo labels drawn from `pt_cls` (constant). Zero without selections.
template <typename T>
Var<T> self_training_loss(model::DualHeadNet<T>& net, const Var<T>& zt, const Tensor<T>& pt_cls, double tau,
                          model::Head head, PseudoTargets targets = PseudoTargets::Hard,
                          PseudoSelection* selection = nullptr);

template <typename T>
struct LossComponents {
  Var<T> cls;
  Var<T> lmmd;  // undefined when not computed
  Var<T> st;
};

/// L_cls + lambda_lmmd L_lmmd [use_lmmd] + lambda_st L_st [use_st].
template <typename T>
Var<T> total_loss(const LossComponents<T>& c, const LossWeights& w, const Ablation& a);

struct StepRecord {
  double lr = 0.0;
  double l_cls = 0.0;
  double l_lmmd = 0.0;
  double l_st = 0.0;
  double total = 0.0;
  std::size_t pseudo_count = 0;
  std::size_t target_seen = 0;
};

/// One optimisation step: source and target forwarded separately in training
/// mode, losses assembled per the ablation, one SGD update at `lr`.
/// `target` may be null when neither LMMD nor self-training is active.
template <typename T>
StepRecord train_step(model::DualHeadNet<T>& net, const data::PatchBatch& source, const data::PatchBatch* target,
                      const TrainConfig& cfg, double lr, bool st_active);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double l_cls = 0.0;
  double l_lmmd = 0.0;
  double l_st = 0.0;
  std::size_t pseudo_count = 0;
  double acceptance = 0.0;
  double wall_time = 0.0;
};

std::string history_line(const EpochRecord& r);
void write_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

struct FitResult {
  model::DualHeadNet<float> net;
  std::vector<EpochRecord> history;
  std::vector<StepRecord> steps;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Network configuration implied by the training config and the scenes.
model::NetworkConfig network_config(const TrainConfig& cfg, const data::SceneBundle& source);

/// Freshly initialised network for a run of `cfg` (what fit starts from).
model::DualHeadNet<float> make_network(const TrainConfig& cfg, const data::SceneBundle& source);

/// Trains for cfg.epochs epochs of floor(n_source / batch) steps. Scenes
/// must already be normalised. Writes checkpoint and history when `out_dir`
/// is given.
FitResult fit(const TrainConfig& cfg, const data::SceneBundle& source, const data::SceneBundle& target,
              const std::optional<std::filesystem::path>& out_dir = std::nullopt, const EpochCallback& on_epoch = {});

struct RunResult {
  std::uint64_t seed = 0;
  eval::MetricsReport target;
  std::vector<EpochRecord> history;
};

/// One fit per seed (run on up to `threads` threads) evaluated on the target
/// scene's labels. Results come back in seed order.
std::vector<RunResult> run_seeds(const TrainConfig& cfg, std::span<const std::uint64_t> seeds,
                                 const data::SceneBundle& source, const data::SceneBundle& target,
                                 std::size_t threads = 1,
                                 const std::optional<std::filesystem::path>& out_dir = std::nullopt);

struct Arm {
  std::string name;
  Ablation ablation;
  std::optional<model::CfaacVariant> variant;
};

/// "table7": baseline, FE only, FE+LMMD, FE+ST, FE+LMMD+ST.
/// "table8": a-d over {pseudo head} x {LMMD}, self-training on.
/// "table9": attention variants a-d with the full method.
std::vector<Arm> ablation_grid(std::string_view name);
TrainConfig apply_arm(TrainConfig cfg, const Arm& arm);

}  // namespace xscene::train
