#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "xscene/cli/config.hpp"
#include "xscene/core/gradcheck.hpp"
#include "xscene/eval/evaluate.hpp"
#include "xscene/training/trainer.hpp"

namespace xscene::cli {

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  // gradient check failure or unexpected error
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

/// Source and target scenes, normalised as configured.
data::DomainPair load_domains(const ExperimentConfig& cfg);

/// A single scene: "source", "target", or a bundle directory.
data::SceneBundle load_scene_ref(const ExperimentConfig& cfg, const std::string& ref);

struct TrainOutcome {
  std::vector<train::RunResult> runs;
  eval::Aggregate aggregate;
};

/// Trains once per configured seed. A single seed writes checkpoint,
/// history.log and report.txt straight into `out`; several seeds get one
/// seed_N directory each plus an aggregate report.txt. resolved.cfg is
/// always written.
TrainOutcome cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out, std::size_t threads,
                       std::ostream& log);

/// Evaluates a checkpoint on a scene and writes report.txt (and map.ppm plus
/// palette.json when `with_map`).
eval::EvalResult cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                          const std::string& scene, const std::filesystem::path& out, bool with_map,
                          std::ostream& log);

/// Runs every registered gradient check in f64. Returns the reports in order.
std::vector<GradCheckReport> run_gradcheck_suite(const GradCheckOptions& primitive_opts = {},
                                                 const GradCheckOptions& model_opts = {1e-5, 1e-4, 24, 0});
/// Prints the table; true when everything passed.
bool cmd_gradcheck(std::ostream& log);

struct AblationOutcome {
  std::string grid;
  std::vector<train::Arm> arms;
  std::vector<std::vector<train::RunResult>> runs;  // [arm][seed]
  std::vector<eval::Aggregate> aggregates;
};

/// Trains every arm of the named grid with the configured seed list and
/// writes ablation_<grid>.txt (mean±std table) into `out`.
AblationOutcome cmd_ablate(const ExperimentConfig& cfg, const std::string& grid, const std::filesystem::path& out,
                           std::size_t threads, std::ostream& log);

/// Arms as columns; per-class accuracy, OA, AA and Kappa x100 as rows.
std::string format_ablation_table(const AblationOutcome& a, const std::vector<std::string>& class_names = {});

/// Writes source/ and target/ bundles under `out` and prints class counts.
data::DomainPair cmd_synth(const ExperimentConfig& cfg, const std::filesystem::path& out, std::ostream& log);

}  // namespace xscene::cli
