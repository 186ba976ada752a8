#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "xscene/core/gradcheck.hpp"
#include "xscene/core/tensor.hpp"
#include "xscene/core/autograd.hpp"

namespace xscene::disc {

/// Family of Gaussian kernels exp(-d / s_k) with s_k = base * mul^(k - num/2)
/// (integer num/2). `base` is the fixed bandwidth when given, otherwise the
/// median of the off-diagonal pairwise squared distances of the pooled sample.
struct KernelSpec {
  std::size_t num_kernels = 5;
  double mul_factor = 2.0;
  std::optional<double> fixed_bandwidth;

  static KernelSpec fixed(double sigma_sq, std::size_t num = 1, double mul = 2.0) {
    return KernelSpec{num, mul, sigma_sq};
  }
  void validate() const;
};

/// D[i, j] = |x_i - y_j|^2 for row sets X [n, d] and Y [m, d].
Tensor<double> pairwise_sq_dists(const Tensor<double>& x, const Tensor<double>& y);

/// Median of the off-diagonal entries of a square distance matrix; 1 when
/// that median is 0 (all points coincide) or there are fewer than 2 points.
double median_bandwidth(const Tensor<double>& sq_dists);

/// The bandwidths s_k for a given base.
std::vector<double> bandwidths(const KernelSpec& spec, double base);

/// Base bandwidth for the pooled rows of X and Y under `spec`.
double base_bandwidth(const Tensor<double>& x, const Tensor<double>& y, const KernelSpec& spec);

/// Mean over the family of exp(-D / s_k); the base is computed on X and Y pooled.
Tensor<double> gaussian_kernel(const Tensor<double>& x, const Tensor<double>& y, const KernelSpec& spec);
/// Same with an explicit base bandwidth.
Tensor<double> gaussian_kernel(const Tensor<double>& x, const Tensor<double>& y, const KernelSpec& spec, double base);

/// mean(K_ss) + mean(K_tt) - 2 mean(K_st).
double mmd_biased(const Tensor<double>& zs, const Tensor<double>& zt, const KernelSpec& spec);

/// Column-normalised weights w[i, c] = y[i, c] / sum_j y[j, c]. Columns with a
/// zero sum are left at zero and flagged invalid.
struct ClassWeights {
  Tensor<double> w;
  std::vector<bool> valid;
};
ClassWeights class_weights(const Tensor<double>& y);

struct WeightMatrix {
  Tensor<double> w_s;  // [n_s, C]
  Tensor<double> w_t;  // [n_t, C]
  std::vector<bool> valid_classes;  // present in both domains
  std::size_t num_valid() const;
};
WeightMatrix lmmd_weights(const Tensor<double>& ys_onehot, const Tensor<double>& pt_probs);

/// Rows of one-hot vectors for 0-based labels.
Tensor<double> one_hot(std::span<const int> labels, std::size_t num_classes);

struct LmmdInfo {
  double base_bandwidth = 0.0;
  std::size_t valid_classes = 0;
};

/// Class-weighted MMD averaged over valid classes. Weights and the bandwidth
/// are constants; gradients reach zs and zt only. Evaluated in double
/// precision whatever T is. No valid class gives 0 and a warning.
template <typename T>
Var<T> lmmd(const Var<T>& zs, const Var<T>& zt, const Tensor<double>& ys_onehot, const Tensor<double>& pt_probs,
            const KernelSpec& spec, LmmdInfo* info = nullptr);

/// Literal triple-loop evaluation of the same quantity, weights included.
double lmmd_oracle(const Tensor<double>& zs, const Tensor<double>& ys_onehot, const Tensor<double>& zt,
                   const Tensor<double>& pt_probs, const KernelSpec& spec);

/// Finite-difference check of lmmd w.r.t. both feature sets (fixed bandwidth).
GradCheckReport check_lmmd(std::uint64_t seed, const GradCheckOptions& opts = {});

}  // namespace xscene::disc
