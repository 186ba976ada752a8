#pragma once

#include <span>
#include <string>
#include <vector>

#include "xscene/core/autograd.hpp"

namespace xscene {

/// Trainable tensor: a gradient-carrying leaf plus its momentum buffer.
template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
  Tensor<T> momentum;
  bool requires_update = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> value)
      : name(std::move(n)), var(Var<T>::leaf(std::move(value), true)), momentum(var.shape(), T(0)) {}

  const Tensor<T>& value() const { return var.value(); }
  Tensor<T>& mutable_value() { return var.mutable_value(); }
  Tensor<T> grad() const { return var.grad_or_zeros(); }
  void zero_grad() { var.zero_grad(); }
};

template <typename T>
void zero_grads(std::span<Parameter<T>* const> params) {
  for (auto* p : params) p->zero_grad();
}

/// lr0 / (1 + alpha * progress)^beta, progress in [0, 1].
double lr_schedule(double progress, double lr0, double alpha, double beta);

struct SgdOptions {
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// Classic SGD with momentum and L2 decay folded into the raw gradient:
///   g' = grad + wd * value;  buf = mu * buf + g';  value -= lr * buf.
/// Every gradient is checked before any parameter changes; a non-finite
/// gradient throws NumericError naming the parameter and nothing is updated.
template <typename T>
void sgd_momentum_step(std::span<Parameter<T>* const> params, double lr, const SgdOptions& opts);

}  // namespace xscene
