#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "xscene/core/ops.hpp"
#include "xscene/core/optim.hpp"

namespace xscene::model {

/// Where the attention block applies GELU:
///   A none, B after the key, C after the depthwise conv, D after key and value.
enum class CfaacVariant { A, B, C, D };
enum class ScaleDivisor { SqrtPatch, SqrtChannels };
enum class HeadKind { Pooled, Flatten };
enum class Head { Cls, Psd };

CfaacVariant parse_variant(std::string_view s);
std::string_view variant_name(CfaacVariant v);
ScaleDivisor parse_scale_divisor(std::string_view s);
std::string_view scale_divisor_name(ScaleDivisor d);
HeadKind parse_head_kind(std::string_view s);
std::string_view head_kind_name(HeadKind h);

struct CfaacConfig {
  CfaacVariant variant = CfaacVariant::D;
  ScaleDivisor scale_divisor = ScaleDivisor::SqrtPatch;
  friend bool operator==(const CfaacConfig&, const CfaacConfig&) = default;
};

struct NetworkConfig {
  std::size_t input_bands = 0;
  std::size_t patch_size = 0;
  std::size_t num_classes = 0;
  std::array<std::size_t, 3> unit_channels{32, 64, 32};
  bool use_cfaac = true;
  CfaacConfig cfaac;
  HeadKind head = HeadKind::Pooled;

  std::size_t feature_dim() const;
  /// Throws ConfigError on zero sizes or an even patch size.
  void validate() const;
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Kaiming-normal standard deviation for LeakyReLU(0.01) and the given fan-in.
double kaiming_std(std::size_t fan_in, double slope = kLeakySlope);

/// [N, H, W, B] patches (as produced by the data module) to an NCHW tensor.
template <typename T>
Tensor<T> to_nchw(const Tensor<float>& patches);

template <typename T>
struct CfaacParams {
  Parameter<T> key_w, key_b, value_w, value_b, query_w, query_b, dw_w;
};

/// Attention block with a centre-pixel query. F is [N, C, ps, ps]; output has the same shape.
template <typename T>
Var<T> cfaac_forward(const Var<T>& f, CfaacParams<T>& p, const CfaacConfig& cfg);

/// Feature extractor with two affine heads that share it.
template <typename T>
class DualHeadNet {
 public:
  DualHeadNet(NetworkConfig config, std::uint64_t seed);
  DualHeadNet(const DualHeadNet&) = delete;
  DualHeadNet& operator=(const DualHeadNet&) = delete;
  DualHeadNet(DualHeadNet&&) noexcept = default;
  DualHeadNet& operator=(DualHeadNet&&) noexcept = default;

  const NetworkConfig& config() const { return config_; }

  /// z = extractor(x) for x [N, B, ps, ps]. Training mode uses batch statistics
  /// and updates the running ones.
  Var<T> features(const Var<T>& x, bool training);
  Var<T> logits(const Var<T>& z, Head head);
  Var<T> probs(const Var<T>& z, Head head) { return ops::softmax(logits(z, head)); }

  /// Eval-mode h_cls probabilities for [N, ps, ps, B] patches, without a graph.
  Tensor<T> predict_probs(const Tensor<float>& patches);
  /// Arg-max class index (0-based) per sample; first index wins ties.
  std::vector<int> predict(const Tensor<float>& patches);

  /// Every trainable tensor, extractor first, then h_cls, then h_psd.
  std::vector<Parameter<T>*> parameters();
  std::vector<Parameter<T>*> head_parameters(Head head);
  Parameter<T>& parameter(std::string_view name);

  /// Running statistics of the three batch-norm layers.
  std::array<BatchNormStats<T>, 3>& bn_stats() { return bn_stats_; }
  const std::array<BatchNormStats<T>, 3>& bn_stats() const { return bn_stats_; }

  /// Independent deep copy (fresh leaves, same values, same momentum buffers).
  DualHeadNet clone() const;

  /// Named tensors in a stable order: parameters then running statistics.
  std::vector<std::pair<std::string, const Tensor<T>*>> state() const;

  /// checkpoint.bin + index.json in `dir`. Round trip is bit-exact.
  void save(const std::filesystem::path& dir) const;
  static DualHeadNet load(const std::filesystem::path& dir);

 private:
  struct Unit {
    Parameter<T> conv_w, conv_b, bn_gamma, bn_beta;
  };
  struct AffineHead {
    Parameter<T> w, b;
  };

  DualHeadNet() = default;

  NetworkConfig config_;
  std::array<Unit, 3> units_;
  CfaacParams<T> cfaac_;
  AffineHead cls_, psd_;
  std::array<BatchNormStats<T>, 3> bn_stats_;
};

/// Tensor-level equality of two networks' full state (bitwise).
template <typename T>
bool same_state(const DualHeadNet<T>& a, const DualHeadNet<T>& b);

}  // namespace xscene::model
