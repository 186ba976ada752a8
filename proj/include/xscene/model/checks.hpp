#pragma once

#include <cstdint>

#include "xscene/core/gradcheck.hpp"
#include "xscene/model/network.hpp"

namespace xscene::model {

/// Finite-difference check of the attention block alone (input and all of its
/// parameters) on a random [2, 4, 5, 5] input.
GradCheckReport check_cfaac(CfaacVariant variant, std::uint64_t seed, const GradCheckOptions& opts = {});

/// Finite-difference check of the whole network in training mode on a
/// 4-sample, 5x5, 6-band batch. The loss is the mean over samples of p[:, 0],
/// summed over both heads so that every head parameter is on the path.
/// Every parameter tensor is probed (sampled when opts.max_entries > 0).
GradCheckReport check_full_model(std::uint64_t seed, const GradCheckOptions& opts = {});

}  // namespace xscene::model
