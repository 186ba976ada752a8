#include "xscene/cli/config.hpp"

#include <fstream>
#include <sstream>

#include "xscene/core/error.hpp"

namespace xscene::cli {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

const std::vector<std::string> kKeys = {
    "preset",         "dataset",        "source",        "target",         "normalization", "out",
    "seeds",          "epochs",         "batch",         "lr0",            "lr_alpha",      "lr_beta",
    "momentum",       "weight_decay",   "patch_size",    "use_cfaac",      "use_lmmd",      "use_st",
    "use_pseudo_head", "cfaac_variant", "cfaac_scale",   "head",           "unit_channels", "lambda_lmmd",
    "lambda_st",      "tau",            "kernel_num",    "kernel_mul",     "kernel_bandwidth", "warmup_epochs",
    "pseudo_targets", "target_pool",    "target_cap",    "record_wall_time", "synth_classes", "synth_bands",
    "synth_grid",     "synth_blob",     "synth_gain",    "synth_offset",   "synth_noise",   "synth_seed",
};

DatasetKind parse_dataset(std::string_view s) {
  if (s == "bundles") return DatasetKind::Bundles;
  if (s == "synth") return DatasetKind::Synth;
  throw ConfigError("unknown dataset kind '" + std::string(s) + "' (expected bundles or synth)");
}

std::string_view dataset_name(DatasetKind k) { return k == DatasetKind::Bundles ? "bundles" : "synth"; }

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has an invalid value: " + v.dump());
  }
}

std::vector<double> per_band(const json& v, const std::string& key) {
  if (v.is_number()) return {v.get<double>()};
  if (v.is_array() && !v.empty()) {
    std::vector<double> out;
    for (const auto& e : v) out.push_back(get_as<double>(e, key));
    return out;
  }
  throw ConfigError("config key '" + key + "' must be a number or a non-empty list of numbers");
}

ordered_json per_band_json(const std::vector<double>& v) {
  if (v.size() == 1) return v[0];
  return v;
}

template <typename Parse>
auto parse_enum(const json& v, const std::string& key, Parse parse) {
  return parse(get_as<std::string>(v, key));
}

}  // namespace

const std::vector<std::string>& config_keys() { return kKeys; }

ordered_json to_json(const ExperimentConfig& c) {
  const train::TrainConfig& t = c.train;
  ordered_json j;
  j["preset"] = c.preset;
  j["dataset"] = dataset_name(c.dataset);
  j["source"] = c.source;
  j["target"] = c.target;
  j["normalization"] = data::normalization_name(c.normalization);
  j["out"] = c.out;
  j["seeds"] = c.seeds;
  j["epochs"] = t.epochs;
  j["batch"] = t.batch;
  j["lr0"] = t.lr0;
  j["lr_alpha"] = t.alpha;
  j["lr_beta"] = t.beta;
  j["momentum"] = t.momentum;
  j["weight_decay"] = t.weight_decay;
  j["patch_size"] = t.patch_size;
  j["use_cfaac"] = t.ablation.use_cfaac;
  j["use_lmmd"] = t.ablation.use_lmmd;
  j["use_st"] = t.ablation.use_st;
  j["use_pseudo_head"] = t.ablation.use_pseudo_head;
  j["cfaac_variant"] = model::variant_name(t.cfaac.variant);
  j["cfaac_scale"] = model::scale_divisor_name(t.cfaac.scale_divisor);
  j["head"] = model::head_kind_name(t.head);
  j["unit_channels"] = t.unit_channels;
  j["lambda_lmmd"] = t.weights.lambda_lmmd;
  j["lambda_st"] = t.weights.lambda_st;
  j["tau"] = t.weights.tau;
  j["kernel_num"] = t.kernel.num_kernels;
  j["kernel_mul"] = t.kernel.mul_factor;
  j["kernel_bandwidth"] = t.kernel.fixed_bandwidth ? ordered_json(*t.kernel.fixed_bandwidth) : ordered_json(nullptr);
  j["warmup_epochs"] = t.warmup_epochs;
  j["pseudo_targets"] = train::pseudo_targets_name(t.pseudo_targets);
  j["target_pool"] = train::target_pool_name(t.target_pool);
  j["target_cap"] = t.target_cap;
  j["record_wall_time"] = t.record_wall_time;
  j["synth_classes"] = c.synth.num_classes;
  j["synth_bands"] = c.synth.bands;
  j["synth_grid"] = c.synth.blob_grid;
  j["synth_blob"] = c.synth.blob_size;
  j["synth_gain"] = per_band_json(c.synth.shift.gain);
  j["synth_offset"] = per_band_json(c.synth.shift.offset);
  j["synth_noise"] = c.synth.noise_sigma;
  j["synth_seed"] = c.synth.seed;
  return j;
}

ExperimentConfig from_json(const json& j, ExperimentConfig c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  train::TrainConfig& t = c.train;
  for (const auto& [key, v] : j.items()) {
    if (key == "preset") c.preset = get_as<std::string>(v, key);
    else if (key == "dataset") c.dataset = parse_enum(v, key, parse_dataset);
    else if (key == "source") c.source = get_as<std::string>(v, key);
    else if (key == "target") c.target = get_as<std::string>(v, key);
    else if (key == "normalization") c.normalization = parse_enum(v, key, data::parse_normalization);
    else if (key == "out") c.out = get_as<std::string>(v, key);
    else if (key == "seeds") {
      if (v.is_number_unsigned()) {
        c.seeds = {v.get<std::uint64_t>()};
      } else {
        if (!v.is_array() || v.empty()) throw ConfigError("config key 'seeds' must be a non-empty list");
        c.seeds.clear();
        for (const auto& s : v) c.seeds.push_back(get_as<std::uint64_t>(s, key));
      }
    }
    else if (key == "epochs") t.epochs = get_as<std::size_t>(v, key);
    else if (key == "batch") t.batch = get_as<std::size_t>(v, key);
    else if (key == "lr0") t.lr0 = get_as<double>(v, key);
    else if (key == "lr_alpha") t.alpha = get_as<double>(v, key);
    else if (key == "lr_beta") t.beta = get_as<double>(v, key);
    else if (key == "momentum") t.momentum = get_as<double>(v, key);
    else if (key == "weight_decay") t.weight_decay = get_as<double>(v, key);
    else if (key == "patch_size") t.patch_size = get_as<std::size_t>(v, key);
    else if (key == "use_cfaac") t.ablation.use_cfaac = get_as<bool>(v, key);
    else if (key == "use_lmmd") t.ablation.use_lmmd = get_as<bool>(v, key);
    else if (key == "use_st") t.ablation.use_st = get_as<bool>(v, key);
    else if (key == "use_pseudo_head") t.ablation.use_pseudo_head = get_as<bool>(v, key);
    else if (key == "cfaac_variant") t.cfaac.variant = parse_enum(v, key, model::parse_variant);
    else if (key == "cfaac_scale") t.cfaac.scale_divisor = parse_enum(v, key, model::parse_scale_divisor);
    else if (key == "head") t.head = parse_enum(v, key, model::parse_head_kind);
    else if (key == "unit_channels") {
      if (!v.is_array() || v.size() != 3) throw ConfigError("config key 'unit_channels' must list three widths");
      for (std::size_t i = 0; i < 3; ++i) t.unit_channels[i] = get_as<std::size_t>(v[i], key);
    }
    else if (key == "lambda_lmmd") t.weights.lambda_lmmd = get_as<double>(v, key);
    else if (key == "lambda_st") t.weights.lambda_st = get_as<double>(v, key);
    else if (key == "tau") t.weights.tau = get_as<double>(v, key);
    else if (key == "kernel_num") t.kernel.num_kernels = get_as<std::size_t>(v, key);
    else if (key == "kernel_mul") t.kernel.mul_factor = get_as<double>(v, key);
    else if (key == "kernel_bandwidth") {
      if (v.is_null()) t.kernel.fixed_bandwidth.reset();
      else t.kernel.fixed_bandwidth = get_as<double>(v, key);
    }
    else if (key == "warmup_epochs") t.warmup_epochs = get_as<std::size_t>(v, key);
    else if (key == "pseudo_targets") t.pseudo_targets = parse_enum(v, key, train::parse_pseudo_targets);
    else if (key == "target_pool") t.target_pool = parse_enum(v, key, train::parse_target_pool);
    else if (key == "target_cap") t.target_cap = get_as<std::size_t>(v, key);
    else if (key == "record_wall_time") t.record_wall_time = get_as<bool>(v, key);
    else if (key == "synth_classes") c.synth.num_classes = get_as<std::size_t>(v, key);
    else if (key == "synth_bands") c.synth.bands = get_as<std::size_t>(v, key);
    else if (key == "synth_grid") c.synth.blob_grid = get_as<std::size_t>(v, key);
    else if (key == "synth_blob") c.synth.blob_size = get_as<std::size_t>(v, key);
    else if (key == "synth_gain") c.synth.shift.gain = per_band(v, key);
    else if (key == "synth_offset") c.synth.shift.offset = per_band(v, key);
    else if (key == "synth_noise") c.synth.noise_sigma = get_as<double>(v, key);
    else if (key == "synth_seed") c.synth.seed = get_as<std::uint64_t>(v, key);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  c.train.validate();
  return c;
}

ExperimentConfig parse_config(std::string_view text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text.begin(), text.end(), nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  try {
    return from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

ExperimentConfig load_config(const std::string& ref) {
  const std::filesystem::path path(ref);
  if (std::filesystem::is_regular_file(path)) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), ref);
  }
  std::string name = path.filename().string();
  if (path.extension() == ".cfg") name = path.stem().string();
  const auto it = presets().find(name);
  if (it == presets().end()) {
    throw ConfigError("config '" + ref + "' is neither a readable file nor a preset (houston, hyrank, pavia, synth)");
  }
  return parse_config(it->second, "preset " + name);
}

ExperimentConfig apply_override(const ExperimentConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json j = json::object();
  j[key] = value;
  return from_json(j, cfg);
}

std::string dump_config(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

}  // namespace xscene::cli
