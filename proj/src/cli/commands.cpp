#include "xscene/cli/commands.hpp"

#include <fstream>
#include <ostream>

#include <fmt/format.h>

#include "xscene/core/primitive_checks.hpp"
#include "xscene/discrepancy/lmmd.hpp"
#include "xscene/model/checks.hpp"

namespace xscene::cli {

namespace fs = std::filesystem;

namespace {

data::SceneBundle normalized(data::SceneBundle b, data::Normalization mode) {
  b.scene = data::normalize_scene(std::move(b.scene), mode);
  return b;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string with_header(const ExperimentConfig& cfg, const std::string& scene, const std::string& body) {
  return fmt::format("preset: {}\nscene: {}\n", cfg.preset, scene) + body;
}

}  // namespace

data::DomainPair load_domains(const ExperimentConfig& cfg) {
  if (cfg.dataset == DatasetKind::Synth) {
    data::DomainPair pair = data::synth_domain_pair(cfg.synth);
    return {normalized(std::move(pair.source), cfg.normalization), normalized(std::move(pair.target), cfg.normalization)};
  }
  if (cfg.source.empty() || cfg.target.empty()) throw ConfigError("source and target bundle paths must be set");
  return {normalized(data::load_scene(cfg.source), cfg.normalization),
          normalized(data::load_scene(cfg.target), cfg.normalization)};
}

data::SceneBundle load_scene_ref(const ExperimentConfig& cfg, const std::string& ref) {
  if (ref == "source" || ref == "target") {
    if (cfg.dataset == DatasetKind::Synth) {
      data::DomainPair pair = data::synth_domain_pair(cfg.synth);
      return normalized(ref == "source" ? std::move(pair.source) : std::move(pair.target), cfg.normalization);
    }
    return normalized(data::load_scene(ref == "source" ? cfg.source : cfg.target), cfg.normalization);
  }
  return normalized(data::load_scene(ref), cfg.normalization);
}

TrainOutcome cmd_train(const ExperimentConfig& cfg, const fs::path& out, std::size_t threads, std::ostream& log) {
  const data::DomainPair d = load_domains(cfg);
  fs::create_directories(out);
  write_text(out / "resolved.cfg", dump_config(cfg));
  const auto& names = d.target.labels.class_names;

  TrainOutcome result;
  if (cfg.seeds.size() == 1) {
    train::TrainConfig t = cfg.train;
    t.seed = cfg.seeds[0];
    train::FitResult fr = train::fit(t, d.source, d.target, out, [&](const train::EpochRecord& r) {
      log << fmt::format("epoch {:>4}  lr {:.5f}  l_cls {:.4f}  l_lmmd {:.4f}  l_st {:.4f}  pseudo {}\n", r.epoch, r.lr,
                         r.l_cls, r.l_lmmd, r.l_st, r.pseudo_count);
    });
    result.runs.push_back({t.seed, eval::evaluate_scene(fr.net, d.target).report, std::move(fr.history)});
    write_text(out / "report.txt", with_header(cfg, "target", eval::format_report(result.runs[0].target, names)));
  } else {
    log << fmt::format("training {} seeds on {} thread(s)\n", cfg.seeds.size(), threads);
    result.runs = train::run_seeds(cfg.train, cfg.seeds, d.source, d.target, threads, out);
    for (const auto& r : result.runs) {
      write_text(out / ("seed_" + std::to_string(r.seed)) / "report.txt",
                 with_header(cfg, "target", eval::format_report(r.target, names)));
      log << fmt::format("seed {}: oa {:.2f}  aa {:.2f}  kappa_x100 {:.2f}\n", r.seed, r.target.oa * 100,
                         r.target.aa * 100, r.target.kappa * 100);
    }
  }
  std::vector<eval::MetricsReport> reports;
  for (const auto& r : result.runs) reports.push_back(r.target);
  result.aggregate = eval::aggregate_runs(reports);
  if (cfg.seeds.size() > 1) {
    write_text(out / "report.txt", with_header(cfg, "target", eval::format_aggregate(result.aggregate, names)));
  }
  log << fmt::format("target OA {}  AA {}  Kappa x100 {}\n", eval::format_mean_std(result.aggregate.oa),
                     eval::format_mean_std(result.aggregate.aa), eval::format_mean_std(result.aggregate.kappa));
  return result;
}

eval::EvalResult cmd_eval(const ExperimentConfig& cfg, const fs::path& checkpoint, const std::string& scene,
                          const fs::path& out, bool with_map, std::ostream& log) {
  model::DualHeadNet<float> net = model::DualHeadNet<float>::load(checkpoint);
  const data::SceneBundle bundle = load_scene_ref(cfg, scene);
  eval::EvalOptions opts;
  opts.predict_all = with_map;
  eval::EvalResult r = eval::evaluate_scene(net, bundle, opts);
  const std::string report = with_header(cfg, scene, eval::format_report(r.report, bundle.labels.class_names));
  write_text(out / "report.txt", report);
  log << report;
  if (with_map) {
    const auto palette = eval::default_palette(net.config().num_classes);
    eval::render_map(out / "map.ppm", r.raster, bundle.scene.height, bundle.scene.width, palette);
    eval::write_palette_json(out / "palette.json", palette, bundle.labels.class_names);
    log << "map written to " << (out / "map.ppm").string() << "\n";
  }
  return r;
}

std::vector<GradCheckReport> run_gradcheck_suite(const GradCheckOptions& primitive_opts,
                                                 const GradCheckOptions& model_opts) {
  std::vector<GradCheckReport> reports;
  for (OpKind op : kAllOps) reports.push_back(check_primitive(op, 1, primitive_opts));
  for (auto v : {model::CfaacVariant::A, model::CfaacVariant::B, model::CfaacVariant::C, model::CfaacVariant::D}) {
    reports.push_back(model::check_cfaac(v, 1, primitive_opts));
  }
  reports.push_back(disc::check_lmmd(1, primitive_opts));
  reports.push_back(model::check_full_model(1, model_opts));
  return reports;
}

bool cmd_gradcheck(std::ostream& log) {
  const auto reports = run_gradcheck_suite();
  bool ok = true;
  log << fmt::format("{:<28} {:>8} {:>14}  {}\n", "subgraph", "inputs", "max_rel_err", "status");
  for (const auto& r : reports) {
    log << fmt::format("{:<28} {:>8} {:>14.3e}  {}\n", r.subgraph, r.entries.size(), r.max_rel_error,
                       r.passed ? "pass" : "FAIL");
    if (!r.passed) {
      ok = false;
      log << "  " << r.failure << "\n";
    }
  }
  log << (ok ? "all gradient checks passed\n" : "gradient check failures\n");
  return ok;
}

std::string format_ablation_table(const AblationOutcome& a, const std::vector<std::string>& class_names) {
  const std::size_t width = 16;
  std::string out = fmt::format("{:<16}", a.grid);
  for (const auto& arm : a.arms) out += fmt::format("{:>{}}", arm.name, width);
  out += "\n";
  const std::size_t classes = a.aggregates.empty() ? 0 : a.aggregates[0].per_class.size();
  for (std::size_t c = 0; c < classes; ++c) {
    const std::string label = c < class_names.size() ? class_names[c] : "class " + std::to_string(c + 1);
    out += fmt::format("{:<16}", label);
    for (const auto& g : a.aggregates) out += fmt::format("{:>{}}", eval::format_mean_std(g.per_class[c]), width);
    out += "\n";
  }
  const auto row = [&](const char* name, auto field) {
    out += fmt::format("{:<16}", name);
    for (const auto& g : a.aggregates) out += fmt::format("{:>{}}", eval::format_mean_std(g.*field), width);
    out += "\n";
  };
  row("OA", &eval::Aggregate::oa);
  row("AA", &eval::Aggregate::aa);
  row("Kappa x100", &eval::Aggregate::kappa);
  return out;
}

AblationOutcome cmd_ablate(const ExperimentConfig& cfg, const std::string& grid, const fs::path& out,
                           std::size_t threads, std::ostream& log) {
  AblationOutcome result;
  result.grid = grid;
  result.arms = train::ablation_grid(grid);
  const data::DomainPair d = load_domains(cfg);
  fs::create_directories(out);
  write_text(out / "resolved.cfg", dump_config(cfg));
  for (const auto& arm : result.arms) {
    const train::TrainConfig t = train::apply_arm(cfg.train, arm);
    auto runs = train::run_seeds(t, cfg.seeds, d.source, d.target, threads);
    std::vector<eval::MetricsReport> reports;
    std::string per_seed;
    for (const auto& r : runs) {
      reports.push_back(r.target);
      per_seed += fmt::format(" {:.2f}", r.target.oa * 100);
    }
    result.aggregates.push_back(eval::aggregate_runs(reports));
    log << fmt::format("{:<12} OA {}  (per seed:{})\n", arm.name, eval::format_mean_std(result.aggregates.back().oa),
                       per_seed);
    result.runs.push_back(std::move(runs));
  }
  const std::string table = format_ablation_table(result, d.target.labels.class_names);
  write_text(out / ("ablation_" + grid + ".txt"), table);
  log << table;
  return result;
}

data::DomainPair cmd_synth(const ExperimentConfig& cfg, const fs::path& out, std::ostream& log) {
  data::DomainPair pair = data::synth_domain_pair(cfg.synth);
  try {
    data::save_scene(out / "source", pair.source.scene, pair.source.labels);
    data::save_scene(out / "target", pair.target.scene, pair.target.labels);
  } catch (const fs::filesystem_error& e) {
    throw DataError(std::string("cannot write synthetic bundles: ") + e.what());
  }
  for (const auto* b : {&pair.source, &pair.target}) {
    log << fmt::format("{}: {}x{}x{}", b->scene.name, b->scene.height, b->scene.width, b->scene.bands);
    const auto counts = b->labels.class_counts();
    for (std::size_t c = 0; c < counts.size(); ++c) log << fmt::format("  {}={}", b->labels.class_names[c], counts[c]);
    log << "\n";
  }
  return pair;
}

}  // namespace xscene::cli
