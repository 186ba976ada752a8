#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "xscene/data/scene.hpp"
#include "xscene/data/synth.hpp"
#include "xscene/training/trainer.hpp"

namespace xscene::cli {

enum class DatasetKind { Bundles, Synth };

/// Everything one experiment needs, serialised as a flat JSON object.
struct ExperimentConfig {
  std::string preset = "default";
  DatasetKind dataset = DatasetKind::Bundles;
  std::string source;
  std::string target;
  data::Normalization normalization = data::Normalization::MinMax;
  std::string out = "runs/default";
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  train::TrainConfig train;
  data::SynthParams synth;
};

/// The keys accepted in a config file, in serialisation order.
const std::vector<std::string>& config_keys();

nlohmann::ordered_json to_json(const ExperimentConfig& cfg);
/// Missing keys keep their defaults; unknown keys and ill-typed values throw ConfigError.
ExperimentConfig from_json(const nlohmann::json& j, ExperimentConfig base = {});

/// Parses config text (JSON with // comments allowed).
ExperimentConfig parse_config(std::string_view text, const std::string& origin = "<config>");

/// Reads a config file, or an embedded preset when `ref` names one
/// ("pavia" or "pavia.cfg" with no such file on disk).
ExperimentConfig load_config(const std::string& ref);

/// "key=value" with the value read as JSON when possible, else as a string.
ExperimentConfig apply_override(const ExperimentConfig& cfg, std::string_view assignment);

/// Full pretty-printed config, every key present. Re-parsing it gives back `cfg`.
std::string dump_config(const ExperimentConfig& cfg);

/// Preset names mapped to their file text.
const std::map<std::string, std::string>& presets();

}  // namespace xscene::cli
