#include "xscene/model/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <json.hpp>

namespace xscene::model {
namespace fs = std::filesystem;
using nlohmann::json;

CfaacVariant parse_variant(std::string_view s) {
  if (s == "a") return CfaacVariant::A;
  if (s == "b") return CfaacVariant::B;
  if (s == "c") return CfaacVariant::C;
  if (s == "d") return CfaacVariant::D;
  throw ConfigError("unknown attention variant '" + std::string(s) + "' (expected a, b, c or d)");
}

std::string_view variant_name(CfaacVariant v) {
  switch (v) {
    case CfaacVariant::A: return "a";
    case CfaacVariant::B: return "b";
    case CfaacVariant::C: return "c";
    case CfaacVariant::D: return "d";
  }
  return "d";
}

ScaleDivisor parse_scale_divisor(std::string_view s) {
  if (s == "sqrt_patch") return ScaleDivisor::SqrtPatch;
  if (s == "sqrt_channels") return ScaleDivisor::SqrtChannels;
  throw ConfigError("unknown scale divisor '" + std::string(s) + "' (expected sqrt_patch or sqrt_channels)");
}

std::string_view scale_divisor_name(ScaleDivisor d) {
  return d == ScaleDivisor::SqrtPatch ? "sqrt_patch" : "sqrt_channels";
}

HeadKind parse_head_kind(std::string_view s) {
  if (s == "pooled") return HeadKind::Pooled;
  if (s == "flatten") return HeadKind::Flatten;
  throw ConfigError("unknown head kind '" + std::string(s) + "' (expected pooled or flatten)");
}

std::string_view head_kind_name(HeadKind h) { return h == HeadKind::Pooled ? "pooled" : "flatten"; }

std::size_t NetworkConfig::feature_dim() const {
  return head == HeadKind::Pooled ? unit_channels[2] : unit_channels[2] * patch_size * patch_size;
}

void NetworkConfig::validate() const {
  if (input_bands == 0) throw ConfigError("network needs at least one input band");
  if (num_classes < 1) throw ConfigError("network needs at least one class");
  if (patch_size == 0 || patch_size % 2 == 0) {
    throw ConfigError("patch size must be odd, got " + std::to_string(patch_size));
  }
  for (auto w : unit_channels) {
    if (w == 0) throw ConfigError("unit widths must be positive");
  }
}

double kaiming_std(std::size_t fan_in, double slope) {
  const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
  return gain / std::sqrt(static_cast<double>(fan_in));
}

template <typename T>
Tensor<T> to_nchw(const Tensor<float>& patches) {
  if (patches.rank() != 4) throw ShapeError("patches must be [N, H, W, B], got " + shape_str(patches.shape()));
  const std::size_t n = patches.dim(0), h = patches.dim(1), w = patches.dim(2), b = patches.dim(3);
  Tensor<T> out(Shape{n, b, h, w});
  const float* src = patches.ptr();
  T* dst = out.ptr();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t c = 0; c < b; ++c) {
          dst[((i * b + c) * h + y) * w + x] = static_cast<T>(*src++);
        }
      }
    }
  }
  return out;
}

template <typename T>
Var<T> cfaac_forward(const Var<T>& f, CfaacParams<T>& p, const CfaacConfig& cfg) {
  if (f.shape().size() != 4) throw ShapeError("attention block expects [N, C, H, W], got " + shape_str(f.shape()));
  const std::size_t c = f.shape()[1], ps = f.shape()[2];
  if (p.key_w.value().dim(1) != c) {
    throw ShapeError("attention block built for " + std::to_string(p.key_w.value().dim(1)) + " channels, got " +
                     std::to_string(c));
  }
  const bool gelu_key = cfg.variant == CfaacVariant::B || cfg.variant == CfaacVariant::D;
  const bool gelu_value = cfg.variant == CfaacVariant::D;
  const bool gelu_dw = cfg.variant == CfaacVariant::C;

  Var<T> k = ops::pointwise_affine(f, p.key_w.var, p.key_b.var);
  if (gelu_key) k = ops::gelu(k);
  Var<T> v = ops::pointwise_affine(f, p.value_w.var, p.value_b.var);
  if (gelu_value) v = ops::gelu(v);
  const Var<T> q = ops::affine(ops::center_pixel(f), p.query_w.var, p.query_b.var);

  const double divisor = cfg.scale_divisor == ScaleDivisor::SqrtPatch ? std::sqrt(static_cast<double>(ps))
                                                                       : std::sqrt(static_cast<double>(c));
  const Var<T> a = ops::scale(ops::center_scores(q, k), static_cast<T>(1.0 / divisor));
  const Var<T> attn = ops::spatial_gate(a, v);
  Var<T> dw = ops::depthwise_conv3x3(f, p.dw_w.var);
  if (gelu_dw) dw = ops::gelu(dw);
  return ops::add(ops::mul(attn, dw), f);
}

namespace {

template <typename T>
Tensor<T> kaiming(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, kaiming_std(fan_in));
  for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> filled(Shape shape, T value) {
  return Tensor<T>(std::move(shape), value);
}

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace

template <typename T>
DualHeadNet<T>::DualHeadNet(NetworkConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto [w1, w2, w3] = config_.unit_channels;
  const std::size_t in[3] = {config_.input_bands, w1, w2};
  const std::size_t out[3] = {w1, w2, w3};
  const char* unit_names[3] = {"unit1", "unit2", "unit3"};

  auto make_unit = [&](std::size_t i) {
    const std::string u = unit_names[i];
    units_[i] = Unit{
        Parameter<T>(u + ".conv.weight", kaiming<T>(Shape{out[i], in[i], 3, 3}, in[i] * 9, rng)),
        Parameter<T>(u + ".conv.bias", filled<T>(Shape{out[i]}, T(0))),
        Parameter<T>(u + ".bn.weight", filled<T>(Shape{out[i]}, T(1))),
        Parameter<T>(u + ".bn.bias", filled<T>(Shape{out[i]}, T(0))),
    };
    bn_stats_[i] = BatchNormStats<T>(out[i]);
  };

  make_unit(0);
  if (config_.use_cfaac) {
    cfaac_ = CfaacParams<T>{
        Parameter<T>("cfaac.key.weight", kaiming<T>(Shape{w1, w1}, w1, rng)),
        Parameter<T>("cfaac.key.bias", filled<T>(Shape{w1}, T(0))),
        Parameter<T>("cfaac.value.weight", kaiming<T>(Shape{w1, w1}, w1, rng)),
        Parameter<T>("cfaac.value.bias", filled<T>(Shape{w1}, T(0))),
        Parameter<T>("cfaac.query.weight", kaiming<T>(Shape{w1, w1}, w1, rng)),
        Parameter<T>("cfaac.query.bias", filled<T>(Shape{w1}, T(0))),
        Parameter<T>("cfaac.dw.weight", kaiming<T>(Shape{w1, 1, 3, 3}, 9, rng)),
    };
  }
  make_unit(1);
  make_unit(2);

  const std::size_t fd = config_.feature_dim(), nc = config_.num_classes;
  cls_ = AffineHead{Parameter<T>("h_cls.weight", kaiming<T>(Shape{nc, fd}, fd, rng)),
                    Parameter<T>("h_cls.bias", filled<T>(Shape{nc}, T(0)))};
  psd_ = AffineHead{Parameter<T>("h_psd.weight", kaiming<T>(Shape{nc, fd}, fd, rng)),
                    Parameter<T>("h_psd.bias", filled<T>(Shape{nc}, T(0)))};
}

template <typename T>
Var<T> DualHeadNet<T>::features(const Var<T>& x, bool training) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != config_.input_bands || s[2] != config_.patch_size || s[3] != config_.patch_size) {
    throw ShapeError("network expects [N, " + std::to_string(config_.input_bands) + ", " +
                     std::to_string(config_.patch_size) + ", " + std::to_string(config_.patch_size) + "], got " +
                     shape_str(s));
  }
  auto unit = [&](const Var<T>& in, std::size_t i) {
    Unit& u = units_[i];
    const Var<T> c = ops::conv3x3(in, u.conv_w.var, u.conv_b.var);
    return ops::leaky_relu(ops::batch_norm2d(c, u.bn_gamma.var, u.bn_beta.var, bn_stats_[i], training));
  };
  Var<T> h = unit(x, 0);
  if (config_.use_cfaac) h = cfaac_forward(h, cfaac_, config_.cfaac);
  h = unit(unit(h, 1), 2);
  if (config_.head == HeadKind::Pooled) return ops::global_avg_pool(h);
  return ops::reshape(h, Shape{s[0], config_.feature_dim()});
}

template <typename T>
Var<T> DualHeadNet<T>::logits(const Var<T>& z, Head head) {
  AffineHead& h = head == Head::Cls ? cls_ : psd_;
  if (z.shape().size() != 2 || z.shape()[1] != config_.feature_dim()) {
    throw ShapeError("head expects [N, " + std::to_string(config_.feature_dim()) + "], got " + shape_str(z.shape()));
  }
  return ops::affine(z, h.w.var, h.b.var);
}

template <typename T>
Tensor<T> DualHeadNet<T>::predict_probs(const Tensor<float>& patches) {
  NoGradGuard guard;
  const Var<T> x = Var<T>::constant(to_nchw<T>(patches));
  return probs(features(x, false), Head::Cls).value();
}

template <typename T>
std::vector<int> DualHeadNet<T>::predict(const Tensor<float>& patches) {
  const Tensor<T> p = predict_probs(patches);
  const std::size_t n = p.dim(0), c = p.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = p.ptr() + i * c;
    out[i] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

template <typename T>
std::vector<Parameter<T>*> DualHeadNet<T>::parameters() {
  std::vector<Parameter<T>*> out;
  auto add_unit = [&](Unit& u) {
    for (auto* p : {&u.conv_w, &u.conv_b, &u.bn_gamma, &u.bn_beta}) out.push_back(p);
  };
  add_unit(units_[0]);
  if (config_.use_cfaac) {
    for (auto* p : {&cfaac_.key_w, &cfaac_.key_b, &cfaac_.value_w, &cfaac_.value_b, &cfaac_.query_w, &cfaac_.query_b,
                    &cfaac_.dw_w}) {
      out.push_back(p);
    }
  }
  add_unit(units_[1]);
  add_unit(units_[2]);
  for (auto* p : {&cls_.w, &cls_.b, &psd_.w, &psd_.b}) out.push_back(p);
  return out;
}

template <typename T>
std::vector<Parameter<T>*> DualHeadNet<T>::head_parameters(Head head) {
  AffineHead& h = head == Head::Cls ? cls_ : psd_;
  return {&h.w, &h.b};
}

template <typename T>
Parameter<T>& DualHeadNet<T>::parameter(std::string_view name) {
  for (auto* p : parameters()) {
    if (p->name == name) return *p;
  }
  throw Error("no parameter named '" + std::string(name) + "'");
}

template <typename T>
DualHeadNet<T> DualHeadNet<T>::clone() const {
  DualHeadNet<T> copy;
  copy.config_ = config_;
  copy.bn_stats_ = bn_stats_;
  auto dup = [](const Parameter<T>& p) {
    Parameter<T> q(p.name, p.value());
    q.momentum = p.momentum;
    q.requires_update = p.requires_update;
    return q;
  };
  for (std::size_t i = 0; i < 3; ++i) {
    const Unit& u = units_[i];
    copy.units_[i] = Unit{dup(u.conv_w), dup(u.conv_b), dup(u.bn_gamma), dup(u.bn_beta)};
  }
  if (config_.use_cfaac) {
    const auto& c = cfaac_;
    copy.cfaac_ = CfaacParams<T>{dup(c.key_w),   dup(c.key_b),   dup(c.value_w), dup(c.value_b),
                                 dup(c.query_w), dup(c.query_b), dup(c.dw_w)};
  }
  copy.cls_ = AffineHead{dup(cls_.w), dup(cls_.b)};
  copy.psd_ = AffineHead{dup(psd_.w), dup(psd_.b)};
  return copy;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> DualHeadNet<T>::state() const {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (auto* p : const_cast<DualHeadNet*>(this)->parameters()) out.emplace_back(p->name, &p->value());
  const char* unit_names[3] = {"unit1", "unit2", "unit3"};
  for (std::size_t i = 0; i < 3; ++i) {
    out.emplace_back(std::string(unit_names[i]) + ".bn.running_mean", &bn_stats_[i].running_mean);
    out.emplace_back(std::string(unit_names[i]) + ".bn.running_var", &bn_stats_[i].running_var);
  }
  return out;
}

namespace {

json config_to_json(const NetworkConfig& c) {
  return {{"input_bands", c.input_bands},
          {"patch_size", c.patch_size},
          {"num_classes", c.num_classes},
          {"unit_channels", c.unit_channels},
          {"use_cfaac", c.use_cfaac},
          {"cfaac_variant", std::string(variant_name(c.cfaac.variant))},
          {"scale_divisor", std::string(scale_divisor_name(c.cfaac.scale_divisor))},
          {"head", std::string(head_kind_name(c.head))}};
}

NetworkConfig config_from_json(const json& j) {
  NetworkConfig c;
  c.input_bands = j.at("input_bands").get<std::size_t>();
  c.patch_size = j.at("patch_size").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.unit_channels = j.at("unit_channels").get<std::array<std::size_t, 3>>();
  c.use_cfaac = j.at("use_cfaac").get<bool>();
  c.cfaac.variant = parse_variant(j.at("cfaac_variant").get<std::string>());
  c.cfaac.scale_divisor = parse_scale_divisor(j.at("scale_divisor").get<std::string>());
  c.head = parse_head_kind(j.at("head").get<std::string>());
  return c;
}

}  // namespace

template <typename T>
void DualHeadNet<T>::save(const fs::path& dir) const {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
  json tensors = json::array();
  std::ofstream bin(dir / "checkpoint.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw DataError("cannot write " + (dir / "checkpoint.bin").string());
  std::size_t offset = 0;
  for (const auto& [name, t] : state()) {
    const std::size_t bytes = t->size() * sizeof(T);
    bin.write(reinterpret_cast<const char*>(t->ptr()), static_cast<std::streamsize>(bytes));
    tensors.push_back({{"name", name}, {"offset", offset}, {"shape", t->shape()}, {"dtype", dtype_name<T>()}});
    offset += bytes;
  }
  if (!bin) throw DataError("short write to " + (dir / "checkpoint.bin").string());

  const json index = {{"format", "xscene-checkpoint"},
                      {"version", 1},
                      {"dtype", dtype_name<T>()},
                      {"network", config_to_json(config_)},
                      {"tensors", tensors}};
  std::ofstream(dir / "index.json") << index.dump(2) << "\n";
}

template <typename T>
DualHeadNet<T> DualHeadNet<T>::load(const fs::path& dir) {
  const fs::path index_path = dir / "index.json", bin_path = dir / "checkpoint.bin";
  for (const auto& p : {index_path, bin_path}) {
    if (!fs::exists(p)) throw DataError("missing checkpoint file " + p.string());
  }
  json index;
  try {
    index = json::parse(std::ifstream(index_path));
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint index " + index_path.string() + ": " + e.what());
  }
  if (index.value("dtype", "") != dtype_name<T>()) {
    throw DataError("checkpoint dtype " + index.value("dtype", "?") + " does not match requested " + dtype_name<T>());
  }
  DualHeadNet<T> net(config_from_json(index.at("network")), 0);

  std::ifstream bin(bin_path, std::ios::binary);
  const std::vector<char> raw((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  const auto slots = net.state();
  const auto& entries = index.at("tensors");
  if (entries.size() != slots.size()) {
    throw DataError("checkpoint holds " + std::to_string(entries.size()) + " tensors, network needs " +
                    std::to_string(slots.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& e = entries[i];
    auto* t = const_cast<Tensor<T>*>(slots[i].second);
    if (e.at("name").get<std::string>() != slots[i].first || e.at("shape").get<Shape>() != t->shape()) {
      throw DataError("checkpoint tensor " + std::to_string(i) + " (" + e.at("name").get<std::string>() +
                      ") does not match network slot " + slots[i].first);
    }
    const std::size_t offset = e.at("offset").get<std::size_t>(), bytes = t->size() * sizeof(T);
    if (offset + bytes > raw.size()) throw DataError("checkpoint data truncated at " + slots[i].first);
    std::memcpy(t->ptr(), raw.data() + offset, bytes);
  }
  return net;
}

template <typename T>
bool same_state(const DualHeadNet<T>& a, const DualHeadNet<T>& b) {
  if (!(a.config() == b.config())) return false;
  const auto sa = a.state(), sb = b.state();
  if (sa.size() != sb.size()) return false;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i].first != sb[i].first || !bitwise_equal(*sa[i].second, *sb[i].second)) return false;
  }
  return true;
}

#define XSCENE_INSTANTIATE_MODEL(T)                                                     \
  template Tensor<T> to_nchw<T>(const Tensor<float>&);                                  \
  template Var<T> cfaac_forward<T>(const Var<T>&, CfaacParams<T>&, const CfaacConfig&); \
  template class DualHeadNet<T>;                                                        \
  template bool same_state<T>(const DualHeadNet<T>&, const DualHeadNet<T>&);

XSCENE_INSTANTIATE_MODEL(float)
XSCENE_INSTANTIATE_MODEL(double)

#undef XSCENE_INSTANTIATE_MODEL

}  // namespace xscene::model
