#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "xscene/cli/commands.hpp"

using namespace xscene;
using namespace xscene::cli;

namespace {

struct CommonOptions {
  std::string config = "synth";
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "Config file or preset name (houston, hyrank, pavia, synth)");
  cmd->add_option("--set", o.sets, "Override one config key, KEY=VALUE (repeatable)");
  cmd->add_option("--seed", o.seed, "Run a single seed instead of the configured list");
  cmd->add_option("--out", o.out, "Output directory (default: the config's out key)");
  cmd->add_flag("--deterministic", o.deterministic, "Record zero wall time so repeated runs write identical files");
}

ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig cfg = load_config(o.config);
  for (const auto& s : o.sets) cfg = apply_override(cfg, s);
  if (o.seed) cfg.seeds = {*o.seed};
  if (!o.out.empty()) cfg.out = o.out;
  if (o.deterministic) cfg.train.record_wall_time = false;
  return cfg;
}

std::size_t thread_count() {
  const char* env = std::getenv("XSCENE_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("XSCENE_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<std::size_t>(n);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-scene hyperspectral classification with domain adaptation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "xscene 1.0.0");

  CommonOptions common;
  auto* train_cmd = app.add_subcommand("train", "Train one model per seed and report target accuracy");
  add_common(train_cmd, common);

  std::string checkpoint;
  std::string scene = "target";
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a scene");
  auto* map_cmd = app.add_subcommand("map", "Evaluate a checkpoint and render a classification map");
  for (auto* cmd : {eval_cmd, map_cmd}) {
    add_common(cmd, common);
    cmd->add_option("--checkpoint", checkpoint, "Directory holding checkpoint.bin and index.json")->required();
    cmd->add_option("--scene", scene, "source, target, or a bundle directory");
  }

  app.add_subcommand("gradcheck", "Finite-difference check of every differentiable subgraph");

  std::string grid = "table7";
  auto* ablate_cmd = app.add_subcommand("ablate", "Train every arm of an ablation grid");
  add_common(ablate_cmd, common);
  ablate_cmd->add_option("--grid", grid, "table7, table8 or table9")->check(CLI::IsMember({"table7", "table8", "table9"}));

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic source/target bundle pair");
  add_common(synth_cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (app.got_subcommand("gradcheck")) return cmd_gradcheck(std::cout) ? kExitOk : kExitFailure;

    const ExperimentConfig cfg = resolve(common);
    const std::size_t threads = thread_count();
    if (train_cmd->parsed()) {
      cmd_train(cfg, cfg.out, threads, std::cout);
    } else if (eval_cmd->parsed() || map_cmd->parsed()) {
      cmd_eval(cfg, checkpoint, scene, cfg.out, map_cmd->parsed(), std::cout);
    } else if (ablate_cmd->parsed()) {
      cmd_ablate(cfg, grid, cfg.out, threads, std::cout);
    } else if (synth_cmd->parsed()) {
      cmd_synth(cfg, cfg.out, std::cout);
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kExitConfig;
  } catch (const DataError& e) {
    spdlog::error("data error: {}", e.what());
    return kExitData;
  } catch (const NumericError& e) {
    spdlog::error("numeric error: {}", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitFailure;
  }
}
