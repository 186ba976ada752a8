#include "xscene/core/optim.hpp"

#include <cmath>

namespace xscene {

double lr_schedule(double progress, double lr0, double alpha, double beta) {
  return lr0 / std::pow(1.0 + alpha * progress, beta);
}

template <typename T>
void sgd_momentum_step(std::span<Parameter<T>* const> params, double lr, const SgdOptions& opts) {
  for (const auto* p : params) {
    if (p->requires_update && p->var.has_grad() && !p->var.grad().all_finite()) {
      throw NumericError("non-finite gradient in parameter '" + p->name + "'");
    }
  }
  const T mu = static_cast<T>(opts.momentum);
  const T wd = static_cast<T>(opts.weight_decay);
  const T step = static_cast<T>(lr);
  for (auto* p : params) {
    if (!p->requires_update) continue;
    Tensor<T>& value = p->mutable_value();
    const bool has_grad = p->var.has_grad();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const T g = (has_grad ? p->var.grad()[i] : T(0)) + wd * value[i];
      p->momentum[i] = mu * p->momentum[i] + g;
      value[i] -= step * p->momentum[i];
    }
  }
}

template void sgd_momentum_step<float>(std::span<Parameter<float>* const>, double, const SgdOptions&);
template void sgd_momentum_step<double>(std::span<Parameter<double>* const>, double, const SgdOptions&);

}  // namespace xscene
