#include "xscene/core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace xscene {
namespace {

std::vector<std::size_t> probe_indices(std::size_t size, std::size_t max_entries, std::uint64_t seed) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (max_entries == 0 || max_entries >= size) return idx;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(max_entries);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double scalar_of(const Var<double>& v) {
  if (!v.defined() || v.size() != 1) {
    throw ShapeError("grad_check: loss must be a scalar, got " + (v.defined() ? shape_str(v.shape()) : "undefined"));
  }
  return v.value()[0];
}

}  // namespace

GradCheckReport grad_check(const std::string& subgraph, const std::function<Var<double>()>& loss_fn,
                           const std::vector<NamedVar>& wrt, const GradCheckOptions& opts) {
  GradCheckReport report;
  report.subgraph = subgraph;
  try {
    for (const auto& nv : wrt) {
      if (!nv.var.defined() || !nv.var.requires_grad() || !nv.var.node()->is_leaf()) {
        throw Error("grad_check: '" + nv.name + "' is not a differentiable leaf");
      }
    }
    Var<double> first = loss_fn();
    Var<double> second = loss_fn();
    const double a = scalar_of(first), b = scalar_of(second);
    if (std::memcmp(&a, &b, sizeof(double)) != 0) {
      report.deterministic = false;
      report.failure = "non-deterministic subgraph: two identical forward passes disagree";
      return report;
    }

    for (const auto& nv : wrt) Var<double>(nv.var).zero_grad();
    backward(second);
    std::vector<Tensor<double>> analytic;
    analytic.reserve(wrt.size());
    for (const auto& nv : wrt) analytic.push_back(nv.var.grad_or_zeros());

    for (std::size_t k = 0; k < wrt.size(); ++k) {
      Var<double> v = wrt[k].var;
      GradCheckEntry entry;
      entry.name = wrt[k].name;
      for (std::size_t i : probe_indices(v.size(), opts.max_entries, opts.sample_seed + k)) {
        double& slot = v.mutable_value()[i];
        const double orig = slot;
        slot = orig + opts.step;
        const double plus = scalar_of(loss_fn());
        slot = orig - opts.step;
        const double minus = scalar_of(loss_fn());
        slot = orig;
        const double fd = (plus - minus) / (2.0 * opts.step);
        const double err = std::abs(analytic[k][i] - fd) / std::max(1.0, std::abs(fd));
        if (!(err <= entry.max_rel_error)) {
          entry.max_rel_error = std::isnan(err) ? INFINITY : err;
          entry.worst_index = i;
        }
        ++entry.checked;
      }
      report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
      report.entries.push_back(std::move(entry));
    }
    report.passed = report.max_rel_error < opts.tolerance;
    if (!report.passed) {
      auto worst = std::max_element(report.entries.begin(), report.entries.end(),
                                    [](const auto& x, const auto& y) { return x.max_rel_error < y.max_rel_error; });
      report.failure = "gradient mismatch in '" + worst->name + "' (max relative error " +
                       std::to_string(worst->max_rel_error) + ")";
    }
  } catch (const std::exception& e) {
    report.passed = false;
    report.failure = e.what();
  }
  return report;
}

}  // namespace xscene
