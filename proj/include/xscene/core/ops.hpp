#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string_view>

#include "xscene/core/autograd.hpp"

namespace xscene {

/// Differentiable primitives. Image tensors are NCHW.
enum class OpKind {
  Affine,
  Matmul,
  Conv3x3,
  DepthwiseConv3x3,
  PointwiseAffine,
  BatchNorm2d,
  LeakyRelu,
  Gelu,
  Softmax,
  LogSoftmax,
  Log,
  GlobalAvgPool,
  Add,
  Mul,
  Scale,
  Sum,
  Mean,
  Reshape,
  CenterPixel,
  CenterScores,
  SpatialGate,
  GatherRows,
  Nll,
};

inline constexpr std::array kAllOps = {
    OpKind::Affine,      OpKind::Matmul,      OpKind::Conv3x3,     OpKind::DepthwiseConv3x3,
    OpKind::PointwiseAffine, OpKind::BatchNorm2d, OpKind::LeakyRelu, OpKind::Gelu,
    OpKind::Softmax,     OpKind::LogSoftmax,  OpKind::Log,         OpKind::GlobalAvgPool,
    OpKind::Add,         OpKind::Mul,         OpKind::Scale,       OpKind::Sum,
    OpKind::Mean,        OpKind::Reshape,     OpKind::CenterPixel, OpKind::CenterScores,
    OpKind::SpatialGate, OpKind::GatherRows,  OpKind::Nll,
};

std::string_view op_name(OpKind op);

inline constexpr double kLeakySlope = 0.01;

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
};

/// Running statistics owned by a batch-norm layer, updated by training-mode
/// forwards. The running variance uses the unbiased batch estimate.
template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

namespace ops {

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);

/// a[n,k] * b[k,m]
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// y = x W^T + b with x[N,in], W[out,in], b[out].
template <typename T> Var<T> affine(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// 3x3 convolution, stride 1, zero padding 1. weight[Co,Ci,3,3]; bias may be undefined.
template <typename T> Var<T> conv3x3(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// One 3x3 kernel per channel (weight[C,1,3,3]), stride 1, zero padding 1, no bias.
template <typename T> Var<T> depthwise_conv3x3(const Var<T>& x, const Var<T>& weight);

/// Channel-mixing affine map applied independently at every spatial position
/// (a 1x1 convolution). weight[Co,Ci], bias[Co].
template <typename T> Var<T> pointwise_affine(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// Per-channel normalisation over (N,H,W). Training mode normalises with the
/// batch statistics and updates `stats`; eval mode uses `stats` only.
template <typename T>
Var<T> batch_norm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T>& stats,
                    bool training, const BatchNormOptions& opts = {});

template <typename T> Var<T> leaky_relu(const Var<T>& x, T slope = T(kLeakySlope));

/// Exact GELU, x * Phi(x).
template <typename T> Var<T> gelu(const Var<T>& x);

/// Row-wise over the last dimension of a [N,C] tensor.
template <typename T> Var<T> softmax(const Var<T>& x);
template <typename T> Var<T> log_softmax(const Var<T>& x);
template <typename T> Var<T> log(const Var<T>& x);

/// [N,C,H,W] -> [N,C] spatial mean.
template <typename T> Var<T> global_avg_pool(const Var<T>& x);

/// [N,C,H,W] -> [N,C] spectrum at (H/2, W/2). H and W must be odd.
template <typename T> Var<T> center_pixel(const Var<T>& x);

/// s[n,0,p] = <q[n,:], k[n,:,p]> for q[N,C], k[N,C,H,W].
template <typename T> Var<T> center_scores(const Var<T>& q, const Var<T>& k);

/// out[n,c,p] = a[n,0,p] * v[n,c,p].
template <typename T> Var<T> spatial_gate(const Var<T>& a, const Var<T>& v);

template <typename T> Var<T> gather_rows(const Var<T>& x, std::span<const std::size_t> rows);

/// -(1/N) * sum(targets * logp) for logp[N,C] and constant targets[N,C].
template <typename T> Var<T> nll(const Var<T>& logp, const Tensor<T>& targets);

}  // namespace ops
}  // namespace xscene
