#include "xscene/training/trainer.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "xscene/core/optim.hpp"

namespace xscene::train {

using model::DualHeadNet;
using model::Head;

PseudoTargets parse_pseudo_targets(std::string_view s) {
  if (s == "hard") return PseudoTargets::Hard;
  if (s == "soft") return PseudoTargets::Soft;
  throw ConfigError("unknown pseudo target mode '" + std::string(s) + "' (expected hard or soft)");
}

std::string_view pseudo_targets_name(PseudoTargets p) { return p == PseudoTargets::Hard ? "hard" : "soft"; }

TargetPool parse_target_pool(std::string_view s) {
  if (s == "labeled") return TargetPool::Labeled;
  if (s == "all") return TargetPool::All;
  throw ConfigError("unknown target pool '" + std::string(s) + "' (expected labeled or all)");
}

std::string_view target_pool_name(TargetPool p) { return p == TargetPool::Labeled ? "labeled" : "all"; }

void TrainConfig::validate() const {
  if (batch == 0) throw ConfigError("batch must be at least 1");
  if (patch_size == 0 || patch_size % 2 == 0) throw ConfigError("patch_size must be odd");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (alpha < 0.0 || beta < 0.0) throw ConfigError("alpha and beta must be non-negative");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (weights.lambda_lmmd < 0.0 || weights.lambda_st < 0.0) throw ConfigError("loss weights must be non-negative");
  if (!(weights.tau > 0.0 && weights.tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
  kernel.validate();
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  if (logits.shape().size() != 2 || logits.shape()[0] != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " for " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t c = logits.shape()[1];
  Tensor<T> targets(logits.shape(), T(0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " outside 0.." + std::to_string(c - 1));
    }
    targets[i * c + static_cast<std::size_t>(labels[i])] = T(1);
  }
  return ops::nll(ops::log_softmax(logits), targets);
}

template <typename T>
Var<T> cross_entropy_soft(const Var<T>& logits, const Tensor<T>& targets) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError("cross_entropy_soft: logits " + shape_str(logits.shape()) + " vs targets " +
                     shape_str(targets.shape()));
  }
  return ops::nll(ops::log_softmax(logits), targets);
}

double cross_entropy_probs(const Tensor<double>& probs, std::span<const int> labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) throw ShapeError("cross_entropy_probs: shape mismatch");
  const std::size_t c = probs.dim(1);
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " outside 0.." + std::to_string(c - 1));
    }
    s -= std::log(probs[i * c + static_cast<std::size_t>(labels[i])]);
  }
  return labels.empty() ? 0.0 : s / static_cast<double>(labels.size());
}

template <typename T>
PseudoSelection select_pseudo(const Tensor<T>& probs, double tau) {
  if (probs.rank() != 2) throw ShapeError("select_pseudo expects [N, C] probabilities");
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  PseudoSelection sel;
  sel.mask.resize(n);
  sel.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = probs.ptr() + i * c;
    const std::size_t arg = static_cast<std::size_t>(std::max_element(row, row + c) - row);
    sel.labels[i] = static_cast<int>(arg);
    sel.mask[i] = static_cast<double>(row[arg]) > tau;
    if (sel.mask[i]) sel.rows.push_back(i);
  }
  return sel;
}

template <typename T>
Var<T> self_training_loss(DualHeadNet<T>& net, const Var<T>& zt, const Tensor<T>& pt_cls, double tau, Head head,
                          PseudoTargets targets, PseudoSelection* selection) {
  PseudoSelection sel = select_pseudo(pt_cls, tau);
  Var<T> loss;
  if (sel.rows.empty()) {
    loss = Var<T>::constant(Tensor<T>::scalar(T(0)));
  } else {
    const Var<T> logits = net.logits(ops::gather_rows(zt, std::span<const std::size_t>(sel.rows)), head);
    if (targets == PseudoTargets::Hard) {
      std::vector<int> labels;
      labels.reserve(sel.rows.size());
      for (auto r : sel.rows) labels.push_back(sel.labels[r]);
      loss = cross_entropy(logits, labels);
    } else {
      const std::size_t c = pt_cls.dim(1);
      Tensor<T> soft(Shape{sel.rows.size(), c});
      for (std::size_t i = 0; i < sel.rows.size(); ++i) {
        std::copy_n(pt_cls.ptr() + sel.rows[i] * c, c, soft.ptr() + i * c);
      }
      loss = cross_entropy_soft(logits, soft);
    }
  }
  if (selection) *selection = std::move(sel);
  return loss;
}

template <typename T>
Var<T> total_loss(const LossComponents<T>& c, const LossWeights& w, const Ablation& a) {
  Var<T> total = c.cls;
  if (a.use_lmmd && c.lmmd.defined()) total = ops::add(total, ops::scale(c.lmmd, static_cast<T>(w.lambda_lmmd)));
  if (a.use_st && c.st.defined()) total = ops::add(total, ops::scale(c.st, static_cast<T>(w.lambda_st)));
  return total;
}

template <typename T>
StepRecord train_step(DualHeadNet<T>& net, const data::PatchBatch& source, const data::PatchBatch* target,
                      const TrainConfig& cfg, double lr, bool st_active) {
  Ablation active = cfg.ablation;
  active.use_st = active.use_st && st_active;
  const bool need_target = active.use_lmmd || active.use_st;
  if (need_target && (!target || target->size() == 0)) throw DataError("train_step needs a target batch");

  StepRecord rec;
  rec.lr = lr;
  LossComponents<T> comp;
  const Var<T> zs = net.features(Var<T>::constant(model::to_nchw<T>(source.patches)), true);
  comp.cls = cross_entropy(net.logits(zs, Head::Cls), source.labels);

  if (need_target) {
    const Var<T> zt = net.features(Var<T>::constant(model::to_nchw<T>(target->patches)), true);
    Tensor<T> pt;
    {
      NoGradGuard guard;
      pt = net.probs(zt, Head::Cls).value();
    }
    rec.target_seen = target->size();
    if (active.use_lmmd) {
      comp.lmmd = disc::lmmd(zs, zt, disc::one_hot(source.labels, net.config().num_classes), pt.template cast<double>(),
                             cfg.kernel);
    }
    if (active.use_st) {
      PseudoSelection sel;
      comp.st = self_training_loss(net, zt, pt, cfg.weights.tau, active.use_pseudo_head ? Head::Psd : Head::Cls,
                                   cfg.pseudo_targets, &sel);
      rec.pseudo_count = sel.rows.size();
    }
  }

  const Var<T> loss = total_loss(comp, cfg.weights, active);
  rec.l_cls = static_cast<double>(comp.cls.value().item());
  if (comp.lmmd.defined()) rec.l_lmmd = static_cast<double>(comp.lmmd.value().item());
  if (comp.st.defined()) rec.l_st = static_cast<double>(comp.st.value().item());
  rec.total = static_cast<double>(loss.value().item());

  std::vector<Parameter<T>*> params = net.parameters();
  zero_grads<T>(params);
  backward(loss);
  sgd_momentum_step<T>(params, lr, SgdOptions{cfg.momentum, cfg.weight_decay});
  return rec;
}

std::string history_line(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  j["l_cls"] = r.l_cls;
  j["l_lmmd"] = r.l_lmmd;
  j["l_st"] = r.l_st;
  j["pseudo_count"] = r.pseudo_count;
  j["acceptance"] = r.acceptance;
  j["wall_time"] = r.wall_time;
  return j.dump();
}

void write_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : history) out << history_line(r) << "\n";
}

model::NetworkConfig network_config(const TrainConfig& cfg, const data::SceneBundle& source) {
  model::NetworkConfig n;
  n.input_bands = source.scene.bands;
  n.patch_size = cfg.patch_size;
  n.num_classes = source.labels.num_classes();
  n.unit_channels = cfg.unit_channels;
  n.use_cfaac = cfg.ablation.use_cfaac;
  n.cfaac = cfg.cfaac;
  n.head = cfg.head;
  return n;
}

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<data::SampleRef> target_pool(const TrainConfig& cfg, const data::SceneBundle& target) {
  std::vector<data::SampleRef> refs = cfg.target_pool == TargetPool::All
                                          ? data::enumerate_all(target.scene.height, target.scene.width)
                                          : data::enumerate_labeled(target.labels);
  for (auto& r : refs) r.label.reset();  // target labels never reach training
  return data::subsample(refs, cfg.target_cap, derive_seed(cfg.seed, 4));
}

}  // namespace

DualHeadNet<float> make_network(const TrainConfig& cfg, const data::SceneBundle& source) {
  return DualHeadNet<float>(network_config(cfg, source), derive_seed(cfg.seed, 1));
}

FitResult fit(const TrainConfig& cfg, const data::SceneBundle& source, const data::SceneBundle& target,
              const std::optional<std::filesystem::path>& out_dir, const EpochCallback& on_epoch) {
  cfg.validate();
  if (source.scene.bands != target.scene.bands) {
    throw DataError("source has " + std::to_string(source.scene.bands) + " bands, target " +
                    std::to_string(target.scene.bands));
  }
  if (target.labels.num_classes() > source.labels.num_classes()) {
    throw DataError("target scene has more classes than the source scene");
  }
  FitResult result{make_network(cfg, source), {}, {}};

  const std::vector<data::SampleRef> src_refs = data::enumerate_labeled(source.labels);
  if (src_refs.size() < cfg.batch) {
    throw ConfigError("source scene has " + std::to_string(src_refs.size()) + " labeled pixels, fewer than one batch of " +
                      std::to_string(cfg.batch));
  }
  const std::size_t steps_per_epoch = src_refs.size() / cfg.batch;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  const bool any_target = cfg.ablation.use_lmmd || cfg.ablation.use_st;
  std::optional<data::CyclingStream> tstream;
  if (any_target) tstream.emplace(target_pool(cfg, target), cfg.batch, derive_seed(cfg.seed, 3));

  const auto t0 = std::chrono::steady_clock::now();
  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const bool st_active = cfg.ablation.use_st && e >= cfg.warmup_epochs;
    const bool need_target = cfg.ablation.use_lmmd || st_active;
    const auto batches = data::batch_stream(src_refs, cfg.batch, derive_seed(cfg.seed, 2), e);
    EpochRecord rec;
    rec.epoch = e;
    std::size_t seen = 0;
    for (const auto& b : batches) {
      const double lr = lr_schedule(static_cast<double>(step) / static_cast<double>(total_steps), cfg.lr0, cfg.alpha,
                                    cfg.beta);
      const data::PatchBatch src = data::make_batch(source.scene, b, cfg.patch_size);
      std::optional<data::PatchBatch> tgt;
      if (need_target) tgt = data::make_batch(target.scene, tstream->next(), cfg.patch_size);
      StepRecord s;
      try {
        s = train_step(result.net, src, tgt ? &*tgt : nullptr, cfg, lr, st_active);
      } catch (const NumericError& err) {
        throw NumericError("epoch " + std::to_string(e) + ", step " + std::to_string(step) + ": " + err.what());
      }
      if (&b == &batches.front()) rec.lr = lr;
      rec.l_cls += s.l_cls;
      rec.l_lmmd += s.l_lmmd;
      rec.l_st += s.l_st;
      rec.pseudo_count += s.pseudo_count;
      seen += s.target_seen;
      result.steps.push_back(s);
      ++step;
    }
    const double n = static_cast<double>(batches.size());
    rec.l_cls /= n;
    rec.l_lmmd /= n;
    rec.l_st /= n;
    rec.acceptance = seen ? static_cast<double>(rec.pseudo_count) / static_cast<double>(seen) : 0.0;
    if (cfg.record_wall_time) {
      rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  if (out_dir) {
    result.net.save(*out_dir);
    write_history(*out_dir / "history.log", result.history);
  }
  return result;
}

std::vector<RunResult> run_seeds(const TrainConfig& cfg, std::span<const std::uint64_t> seeds,
                                 const data::SceneBundle& source, const data::SceneBundle& target, std::size_t threads,
                                 const std::optional<std::filesystem::path>& out_dir) {
  std::vector<RunResult> results(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        TrainConfig c = cfg;
        c.seed = seeds[i];
        std::optional<std::filesystem::path> dir;
        if (out_dir) dir = *out_dir / ("seed_" + std::to_string(seeds[i]));
        FitResult fr = fit(c, source, target, dir);
        results[i] = RunResult{seeds[i], eval::evaluate_scene(fr.net, target).report, std::move(fr.history)};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, seeds.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

std::vector<Arm> ablation_grid(std::string_view name) {
  if (name == "table7") {
    return {
        {"baseline", {false, false, false, true}, {}},
        {"FE only", {true, false, false, true}, {}},
        {"FE+LMMD", {true, true, false, true}, {}},
        {"FE+ST", {true, false, true, true}, {}},
        {"FE+LMMD+ST", {true, true, true, true}, {}},
    };
  }
  if (name == "table8") {
    return {
        {"a", {true, false, true, false}, {}},
        {"b", {true, false, true, true}, {}},
        {"c", {true, true, true, false}, {}},
        {"d", {true, true, true, true}, {}},
    };
  }
  if (name == "table9") {
    std::vector<Arm> arms;
    for (auto v : {model::CfaacVariant::A, model::CfaacVariant::B, model::CfaacVariant::C, model::CfaacVariant::D}) {
      arms.push_back({std::string(model::variant_name(v)), Ablation{}, v});
    }
    return arms;
  }
  throw ConfigError("unknown ablation grid '" + std::string(name) + "' (expected table7, table8 or table9)");
}

TrainConfig apply_arm(TrainConfig cfg, const Arm& arm) {
  cfg.ablation = arm.ablation;
  if (arm.variant) cfg.cfaac.variant = *arm.variant;
  return cfg;
}

#define XSCENE_INSTANTIATE_TRAIN(T)                                                                               \
  template Var<T> cross_entropy<T>(const Var<T>&, std::span<const int>);                                          \
  template Var<T> cross_entropy_soft<T>(const Var<T>&, const Tensor<T>&);                                         \
  template PseudoSelection select_pseudo<T>(const Tensor<T>&, double);                                            \
  template Var<T> self_training_loss<T>(DualHeadNet<T>&, const Var<T>&, const Tensor<T>&, double, Head,          \
                                        PseudoTargets, PseudoSelection*);                                         \
  template Var<T> total_loss<T>(const LossComponents<T>&, const LossWeights&, const Ablation&);                   \
  template StepRecord train_step<T>(DualHeadNet<T>&, const data::PatchBatch&, const data::PatchBatch*,           \
                                    const TrainConfig&, double, bool);

XSCENE_INSTANTIATE_TRAIN(float)
XSCENE_INSTANTIATE_TRAIN(double)

#undef XSCENE_INSTANTIATE_TRAIN

}  // namespace xscene::train
