#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xscene/core/autograd.hpp"

namespace xscene {

struct NamedVar {
  std::string name;
  Var<double> var;  // leaf with requires_grad
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Entries probed per input; 0 probes every entry. A deterministic sample
  /// is drawn otherwise.
  std::size_t max_entries = 0;
  std::uint64_t sample_seed = 0;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_index = 0;
};

struct GradCheckReport {
  std::string subgraph;
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool deterministic = true;
  bool passed = false;
  std::string failure;
};

/// Compares reverse-mode gradients of the scalar returned by `loss_fn` with
/// respect to `wrt` against central finite differences. The error measure is
/// |g_ad - g_fd| / max(1, |g_fd|). `loss_fn` must rebuild the graph from the
/// current values of `wrt` on every call.
GradCheckReport grad_check(const std::string& subgraph, const std::function<Var<double>()>& loss_fn,
                           const std::vector<NamedVar>& wrt, const GradCheckOptions& opts = {});

}  // namespace xscene
