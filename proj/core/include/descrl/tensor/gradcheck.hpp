#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "descrl/tensor/graph.hpp"

namespace descrl::tensor {

struct GradientCheckOptions {
  double step = 1e-4;
  /// Entries probed per parameter; 0 probes every entry.
  std::size_t max_entries_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradientCheckResult {
  double max_relative_error = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
  std::size_t probed = 0;
};

using LossBuilder = std::function<Var<double>(Graph<double>&)>;

/// Compares backward() against central differences in 64-bit mode. The
/// error per entry is |a - n| / max(|a|, |n|, 1e-8); the maximum is
/// reported. `loss` must rebuild the same computation on every call.
GradientCheckResult gradient_check(ParameterSet<double>& params, const LossBuilder& loss,
                                   GradientCheckOptions options = {});

}  // namespace descrl::tensor
