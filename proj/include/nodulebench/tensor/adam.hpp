#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nodulebench/tensor/tensor.hpp"

namespace nb {

/// Moments for one list of parameters, aligned by index.
struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  /// Zeroed moments shaped like `params`.
  static AdamState for_parameters(std::span<const Tensor> params);
};

/// Bias-corrected Adam update of every parameter from its accumulated grad
/// (a missing grad counts as zero). Increments step_count by one.
void adam_step(std::span<Tensor> params, AdamState& state, double lr);

}  // namespace nb
