#pragma once

#include <cstdint>

#include "xscene/core/gradcheck.hpp"
#include "xscene/core/ops.hpp"

namespace xscene {

/// Finite-difference check of one primitive on small random f64 inputs drawn
/// from `seed`. The scalar loss is a fixed random projection of the output.
GradCheckReport check_primitive(OpKind op, std::uint64_t seed, const GradCheckOptions& opts = {});

}  // namespace xscene
